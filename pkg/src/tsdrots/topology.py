"""Topology constraint builders.

Covers fixed lines and symmetry breaking, the electrical-flow connectedness
rows for the first stage, the parameterized connectedness region used by the
third stage, the auxiliary lower-level slack LP whose optimum measures how
disconnected a post-contingency topology is, and the five-indicator block
tying fault counts, slack magnitude and corrective switching together.

Affine expressions are (coeffs, const, olin) triples so region membership
can be stated for plain status variables, for status-plus-restored-faults,
and for indicator-weighted relaxation levels alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .blocks import BINARY, CONTINUOUS, EQ, GE, LE, LinearBlock, negated
from .linearize import vn
from .network import GridCase, IncidenceSet, is_uniquely_balanced


def expr(coeffs=None, const=0.0, olin=None):
    return (dict(coeffs or {}), float(const), dict(olin or {}))


def var_expr(name):
    return ({name: 1.0}, 0.0, {})


@dataclass
class TopologyVars:
    """Names of every topology-related variable of one third-stage block."""

    z1: list                      # first-stage statuses
    zo: list                      # post-contingency statuses
    zt: list                      # post-control statuses
    zup: list
    zdn: list
    phi: dict                     # 1..5 -> name
    alp: list                     # lower-level slack (+) per bus
    alm: list                     # lower-level slack (-) per bus
    k_max: int = 1
    k_b: int = 1
    r: float = 1.0
    n_m: int = 2
    jnorm: float = 1.0            # second-smallest |J~ alpha| entry, precomputed


def second_smallest_abs(vec):
    v = np.sort(np.abs(np.asarray(vec, dtype=float)))
    if len(v) < 2:
        raise ValueError("need at least two entries")
    return float(v[1])


def build_fixed_and_symmetry(case: GridCase, inc: IncidenceSet, z, block=None) -> LinearBlock:
    """Must-stay-on equalities plus one representative per identical-line group.

    Within a group ordered by branch id, statuses are forced nonincreasing,
    so of all permutations with the same on-count only the id-ascending one
    survives.
    """
    block = block if block is not None else LinearBlock()
    for k in inc.on_branches:
        block.add_row({z[k]: 1.0}, EQ, 1.0, tag=f"fixed:{case.branches[k].id}")
    for group in inc.sym_groups:
        for a, b in zip(group, group[1:]):
            block.add_row({z[a]: 1.0, z[b]: -1.0}, GE, 0.0,
                          tag=f"sym:{case.branches[a].id}_{case.branches[b].id}")
    return block


def region_membership(block: LinearBlock, case: GridCase, inc: IncidenceSet,
                      z_exprs, phi_expr, alpha, alpha_tilde, prefix, M, tag):
    """Emit membership rows of the parameterized connectedness region.

    ``z_exprs`` gives one affine status expression per branch, ``phi_expr``
    the affine relaxation level (0 enforces connectedness of the closed
    subgraph, >= 1 turns every row vacuous), ``alpha`` the constant
    uniquely-balanced injections and ``alpha_tilde`` optional affine slack
    injections per bus.  Fresh potential/flow auxiliaries are declared under
    ``prefix``.
    """
    nv, ne = inc.E.shape
    pot = [block.declare(vn("pot", prefix, bus.id)) for bus in case.buses]
    flw = [block.declare(vn("flw", prefix, br.id)) for br in case.branches]
    pc, pk, pol = phi_expr

    def add(base, sense, rhs, zc=0.0, phic=0.0, rowtag=""):
        row = dict(base)
        olin = {}
        if zc:
            zcoeffs, zconst, zol = zc
            for n, c in zcoeffs.items():
                row[n] = row.get(n, 0.0) + c
            rhs -= zconst
            for j, c in zol.items():
                olin[j] = olin.get(j, 0.0) + c
        if phic:
            for n, c in pc.items():
                row[n] = row.get(n, 0.0) + phic * c
            rhs -= phic * pk
            for j, c in pol.items():
                olin[j] = olin.get(j, 0.0) + phic * c
        block.add_row(row, sense, rhs, tag=rowtag, olin=olin)

    for k, br in enumerate(case.branches):
        u, w = case.bus_index()[br.from_bus], case.bus_index()[br.to_bus]
        base = {pot[u]: 1.0, pot[w]: -1.0, flw[k]: -1.0}
        zc, zk_c, zol = z_exprs[k]
        mz = ({n: -M * c for n, c in zc.items()}, -M * zk_c, {j: -M * c for j, c in zol.items()})
        pz = ({n: M * c for n, c in zc.items()}, M * zk_c, {j: M * c for j, c in zol.items()})
        add(base, GE, -M, zc=mz, phic=M, rowtag=f"{tag}:pot:{br.id}:lo")
        add(base, LE, M, zc=pz, phic=-M, rowtag=f"{tag}:pot:{br.id}:hi")
        add({flw[k]: 1.0}, GE, 0.0, zc=pz, phic=M, rowtag=f"{tag}:flw:{br.id}:lo")
        add({flw[k]: 1.0}, LE, 0.0, zc=mz, phic=-M, rowtag=f"{tag}:flw:{br.id}:hi")
    for u, bus in enumerate(case.buses):
        base = {}
        for k in range(ne):
            if inc.E[u, k]:
                base[flw[k]] = inc.E[u, k]
        rhs = float(alpha[u])
        if alpha_tilde is not None:
            acoeffs, aconst, aol = alpha_tilde[u]
            for n, c in acoeffs.items():
                base[n] = base.get(n, 0.0) - c
            rhs += aconst
        add(dict(base), GE, rhs, phic=M, rowtag=f"{tag}:bal:{bus.id}:lo")
        add(dict(base), LE, rhs, phic=-M, rowtag=f"{tag}:bal:{bus.id}:hi")
    return pot, flw


def build_connectedness_stage1(case: GridCase, inc: IncidenceSet, z, alpha,
                               cfg, block=None) -> LinearBlock:
    """Feasibility of these rows for fixed binary z is equivalent to the
    closed subgraph being connected (alpha must be uniquely balanced)."""
    block = block if block is not None else LinearBlock()
    if not is_uniquely_balanced(alpha):
        raise ValueError("alpha is not uniquely balanced")
    region_membership(block, case, inc, [var_expr(n) for n in z],
                      expr(), alpha, None, "s1cc", cfg.bigm_physical, "cc1")
    return block


def region_Z(block, case, inc, z_exprs, phi_expr, alpha, alpha_tilde, prefix, M, tag="regZ"):
    """Public wrapper used by the third-stage builders and by tests."""
    return region_membership(block, case, inc, z_exprs, phi_expr, alpha,
                             alpha_tilde, prefix, M, tag)


@dataclass
class LowerLevel:
    """The slack-injection LP attached to the third stage.

    rows are in <= form over upper variables (post-contingency statuses and
    the topology-unchanged indicator) and lower continuous variables (slack
    injections, potentials, flows); the objective is the total slack.
    """

    rows: list = field(default_factory=list)
    cont_vars: list = field(default_factory=list)
    upper_vars: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)


def build_lower_level_lp(case: GridCase, inc: IncidenceSet, z_o, phi2, alpha,
                         cfg, block: LinearBlock, prefix="ll") -> LowerLevel:
    """Slack LP: minimal extra injections making the flow rows of the
    post-contingency topology feasible (0 iff connected when the topology
    actually changed)."""
    tmp = LinearBlock()
    for n in z_o:
        tmp.declare(n, BINARY, 0.0, 1.0)
    tmp.declare(phi2, BINARY, 0.0, 1.0)
    alp = [tmp.declare(vn("alp", prefix, bus.id), CONTINUOUS) for bus in case.buses]
    alm = [tmp.declare(vn("alm", prefix, bus.id), CONTINUOUS) for bus in case.buses]
    atil = [expr({p: 1.0, m: -1.0}) for p, m in zip(alp, alm)]
    region_membership(tmp, case, inc, [var_expr(n) for n in z_o],
                      var_expr(phi2), alpha, atil, prefix,
                      cfg.bigm_physical, "ll")
    for n in alp + alm:
        tmp.add_row({n: 1.0}, GE, 0.0, tag=f"ll:nn:{n}")
    rows = []
    for r in tmp.rows:
        if r.sense == EQ:
            raise AssertionError("lower level emits inequality rows only")
        rows.append(negated(r) if r.sense == GE else r)
    for d in tmp.vars.values():
        block.declare(d.name, d.kind, d.lb, d.ub)
    cont = [d.name for d in tmp.vars.values()
            if d.name not in z_o and d.name != phi2]
    return LowerLevel(rows, cont, list(z_o) + [phi2],
                      {n: 1.0 for n in alp + alm})


def build_switching_logic(case: GridCase, inc: IncidenceSet, tv: TopologyVars,
                          block: LinearBlock):
    """Corrective-switching bookkeeping: post-control statuses derive from
    post-contingency ones via on/off action indicators that are binary at
    any optimum without being declared so."""
    b_off = len(case.conv)
    for k, br in enumerate(case.branches):
        block.add_row({tv.zt[k]: 1.0, tv.zo[k]: -1.0, tv.zup[k]: -1.0,
                       tv.zdn[k]: 1.0}, EQ, 0.0, tag=f"switch:def:{br.id}", family="F")
        block.add_row({tv.zup[k]: 1.0, tv.zdn[k]: 1.0}, LE, 1.0,
                      tag=f"switch:one:{br.id}", family="F")
        block.add_row({tv.zt[k]: 1.0}, LE, 0.0, tag=f"switch:fault:{br.id}",
                      family="M", olin={b_off + k: -1.0})
        block.add_row({tv.zo[k]: 1.0}, EQ, 0.0, tag=f"switch:zo:{br.id}",
                      family="R", obil=((b_off + k, tv.z1[k], -1.0),))
    for k in inc.nc_branches:
        br = case.branches[k]
        block.add_row({tv.zup[k]: 1.0}, EQ, 0.0, tag=f"switch:ncu:{br.id}", family="F")
        block.add_row({tv.zdn[k]: 1.0}, EQ, 0.0, tag=f"switch:ncd:{br.id}", family="F")


def build_contingency_connectedness(case: GridCase, inc: IncidenceSet,
                                    tv: TopologyVars, alpha, cfg,
                                    block: LinearBlock):
    """Indicator block guarding post-contingency and post-control
    connectedness, ignoring disconnections that no switching could avoid."""
    M = cfg.bigm_physical
    ne, nv = len(case.branches), len(case.buses)
    b_off = len(case.conv)
    kb, kmax, r, nm = tv.k_b, tv.k_max, tv.r, tv.n_m
    slack = {}
    for n in tv.alp + tv.alm:
        slack[n] = 1.0
    # fault-count gate: phi1 = 1 iff (# fault branches) <= k_b
    ob = {b_off + k: -1.0 for k in range(ne)}
    block.add_row({tv.phi[1]: kb + 1.0}, GE, 1.0 - ne + kb,
                  tag="cc3:kb:lo", family="M", olin=dict(ob))
    block.add_row({tv.phi[1]: kmax - kb}, LE, float(kmax - ne),
                  tag="cc3:kb:hi", family="M", olin=dict(ob))
    # slack cap under the gate
    row = dict(slack)
    row[tv.phi[1]] = M
    block.add_row(row, LE, nm * r + M, tag="cc3:slackcap", family="F")
    # phi3: slack below twice the second-smallest |alpha|; phi4: slack above n_m r
    twoj = 2.0 * tv.jnorm
    row = dict(slack)
    row[tv.phi[3]] = M
    block.add_row(row, GE, twoj, tag="cc3:phi3:lo", family="F")
    block.add_row(dict(row), LE, twoj + M, tag="cc3:phi3:hi", family="F")
    row = {tv.phi[4]: M}
    for n, c in slack.items():
        row[n] = -c
    block.add_row(row, GE, -nm * r, tag="cc3:phi4:lo", family="F")
    row = dict(slack)
    row[tv.phi[4]] = -M
    block.add_row(row, GE, nm * r - M, tag="cc3:phi4:hi", family="F")
    # phi2: post-contingency topology equals the scheduled one
    row = {n: 1.0 for n in tv.z1}
    for n in tv.zo:
        row[n] = row.get(n, 0.0) - 1.0
    row[tv.phi[2]] = -float(kmax)
    block.add_row(dict(row), GE, -float(kmax), tag="cc3:phi2:lo", family="F")
    row[tv.phi[2]] = float(kmax)
    block.add_row(row, LE, float(kmax), tag="cc3:phi2:hi", family="F")
    # phi5: no corrective switch-offs
    cyc = max(ne - nv + 1, 0)
    row = {n: 1.0 for n in tv.zdn}
    row[tv.phi[5]] = 1.0
    block.add_row(dict(row), GE, 1.0, tag="cc3:phi5:lo", family="F")
    row[tv.phi[5]] = float(cyc)
    block.add_row(row, LE, float(cyc), tag="cc3:phi5:hi", family="F")
    # post-control topology stays connected when the post-contingency one was
    phi_g = expr({**{n: 1.0 for n in tv.alp}, **{n: 1.0 for n in tv.alm},
                  tv.phi[5]: 1.0})
    mark = len(block.rows)
    region_membership(block, case, inc, [var_expr(n) for n in tv.zt], phi_g,
                      alpha, None, "s3g", M, "cc3:post")
    for i in range(mark, len(block.rows)):
        block.rows[i] = _with_family(block.rows[i], "F")
    # ... and, with faulted branches virtually restored, switching does not
    # add disconnection beyond the inevitable one
    z_rest = [({tv.zt[k]: 1.0}, 1.0, {b_off + k: -1.0}) for k in range(ne)]
    phi_h = expr({tv.phi[3]: 1.0, tv.phi[4]: 1.0})
    mark = len(block.rows)
    region_membership(block, case, inc, z_rest, phi_h, alpha, None, "s3h", M,
                      "cc3:restored")
    for i in range(mark, len(block.rows)):
        block.rows[i] = _with_family(block.rows[i], "M")


def _with_family(row, family):
    return replace(row, family=family)
