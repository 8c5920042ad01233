"""Assembly of the three stage models in compact form.

Stage 1 owns the scheduling decisions (piecewise generation cost, linearized
flows, topology with connectedness and symmetry breaking).  Stage 2 is a
flow/operational replica coupled to stage 1 through ramping and the
forecast-error equality, keeping the stage-1 statuses and loads.  Stage 3 is
a replica parameterized by the contingency vector, with corrective switching
logic, load shedding at constant power factor, the indicator-gated
connectedness block and the slack LP attached as a lower level.

Rows carry a compact-family letter: A (stage-1), C (stage-2, with the
forecast error entering affinely on the right-hand side), and F/M/R for the
stage-3 rows that are contingency-free, linear in the contingency vector,
and bilinear in it, respectively.  The lower level is kept as an argmin
until the single-level reformulation replaces it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .blocks import BINARY, CONTINUOUS, EQ, GE, INF, LE, LinearBlock
from .config import RunConfig
from .linearize import (build_bus_balance, build_lpac_branch,
                        build_octagon_thermal, build_pwl_cost,
                        build_vre_capability, vn)
from .network import GridCase, IncidenceSet, build_incidence, default_alpha
from .topology import (LowerLevel, TopologyVars, build_connectedness_stage1,
                       build_contingency_connectedness,
                       build_fixed_and_symmetry, build_lower_level_lp,
                       build_switching_logic, second_smallest_abs)


@dataclass
class CompactStageModel:
    stage: int
    block: LinearBlock
    lower_level: LowerLevel | None = None
    tvars: TopologyVars | None = None
    eps_dim: int = 0

    @property
    def objective(self):
        return self.block.obj

    def binaries(self):
        return self.block.binaries()


def _relabel(block: LinearBlock, letter: str):
    block.rows = [replace(r, family=letter) if not r.family else r
                  for r in block.rows]


def _theta_limits(case, z, stage, cfg, block):
    M = cfg.bigm_physical
    for k, br in enumerate(case.branches):
        thf = block.declare(vn("th", stage, br.from_bus))
        tht = block.declare(vn("th", stage, br.to_bus))
        block.add_row({thf: 1.0, tht: -1.0, z[k]: -M}, GE, -br.theta_max - M,
                      tag=f"thlim:{br.id}:lo")
        block.add_row({thf: 1.0, tht: -1.0, z[k]: M}, LE, br.theta_max + M,
                      tag=f"thlim:{br.id}:hi")


def _declare_voltages(case, stage, block):
    for bus in case.buses:
        block.declare(vn("v", stage, bus.id), CONTINUOUS, bus.v_min, bus.v_max)


def controlled_buses(case: GridCase):
    return sorted({g.bus for g in case.conv} | {g.bus for g in case.vre})


def assemble_stage1(case: GridCase, inc: IncidenceSet | None = None,
                    cfg: RunConfig | None = None) -> CompactStageModel:
    cfg = cfg or RunConfig()
    inc = inc or build_incidence(case)
    st = "s1"
    block = LinearBlock()
    z = [block.declare(vn("z", st, br.id), BINARY, 0.0, 1.0) for br in case.branches]
    _declare_voltages(case, st, block)
    build_pwl_cost(case, st, block)
    build_lpac_branch(case, inc, z, st, cfg, block)
    load_p = [({}, d.p) for d in case.loads]
    load_q = [({}, d.q) for d in case.loads]
    build_bus_balance(case, inc, z, st, cfg, load_p, load_q, block)
    build_octagon_thermal(case, inc, z, st, cfg, block)
    build_vre_capability(case, st, cfg.n_s, cfg, block=block)
    _theta_limits(case, z, st, cfg, block)
    if cfg.symmetry:
        build_fixed_and_symmetry(case, inc, z, block)
    else:
        _fixed_only(case, inc, z, block)
    if not cfg.allow_ots:
        for k, br in enumerate(case.branches):
            block.add_row({z[k]: 1.0}, EQ, 1.0, tag=f"variant:fixz:{br.id}")
    if cfg.nc_stage1:
        build_connectedness_stage1(case, inc, z, default_alpha(len(case.buses)),
                                   cfg, block)
    _relabel(block, "A")
    return CompactStageModel(1, block.check())


def _fixed_only(case, inc, z, block):
    for k in inc.on_branches:
        block.add_row({z[k]: 1.0}, EQ, 1.0, tag=f"fixed:{case.branches[k].id}")


def assemble_stage2(case: GridCase, inc: IncidenceSet | None = None,
                    cfg: RunConfig | None = None,
                    stage1: CompactStageModel | None = None) -> CompactStageModel:
    """Recourse replica reacting to the forecast error.

    Statuses and loads stay first-stage; dispatch, voltages and the VRE
    availability become second-stage variables tied to stage 1 by ramping
    and shift equalities.  The availability equality carries the forecast
    error affinely and is later slacked by the recourse penalization.
    """
    cfg = cfg or RunConfig()
    inc = inc or build_incidence(case)
    st, up = "s2", "s1"
    block = LinearBlock()
    z = [vn("z", up, br.id) for br in case.branches]
    for k, br in enumerate(case.branches):
        block.declare(z[k], BINARY, 0.0, 1.0)
    _declare_voltages(case, st, block)
    for bid in controlled_buses(case):
        block.declare(vn("v", up, bid))
    for g in case.conv:
        block.declare(vn("pc", up, g.id))
        block.declare(vn("pc", st, g.id), CONTINUOUS, g.p_min, g.p_max)
        block.declare(vn("qc", st, g.id), CONTINUOUS, g.q_min, g.q_max)
        block.declare(vn("pcp", st, g.id), CONTINUOUS, 0.0, case.dt2 * g.ramp_up)
        block.declare(vn("pcm", st, g.id), CONTINUOUS, 0.0, case.dt2 * g.ramp_dn)
        block.add_obj(vn("pcp", st, g.id), g.w_up)
        block.add_obj(vn("pcm", st, g.id), g.w_dn)
    pvmax = []
    sigma2 = cfg.sigma2_for(case)
    for j, g in enumerate(case.vre):
        block.declare(vn("pv", up, g.id))
        block.declare(vn("qv", up, g.id))
        pvmax.append(block.declare(vn("pvmax", st, g.id), CONTINUOUS, 0.0, g.s_max))
        block.declare(vn("pvp", st, g.id), CONTINUOUS, 0.0, case.dt2 * g.ramp_up)
        block.declare(vn("pvm", st, g.id), CONTINUOUS, 0.0)
        block.add_obj(vn("pvp", st, g.id), g.w_up)
        block.add_obj(vn("pvm", st, g.id), g.w_dn)
        # availability equality, affine in the forecast error
        block.add_row({pvmax[j]: 1.0}, EQ, g.p_fc, tag=f"couple:pvmax:{g.id}",
                      eps={j: 1.0})
        # capability carried over from stage 1: d >= first-stage output minus
        # realized availability, penalized so it settles at the positive part
        d = block.declare(vn("dmin", st, g.id), CONTINUOUS, 0.0)
        block.add_obj(d, sigma2)
        block.add_row({d: 1.0, vn("pv", up, g.id): -1.0, pvmax[j]: 1.0}, GE, 0.0,
                      tag=f"ramp:vcap:{g.id}")
        base = {vn("pv", up, g.id): 1.0, d: -1.0, vn("pvp", st, g.id): 1.0,
                vn("pv", st, g.id): -1.0}
        block.add_row(dict(base), GE, 0.0, tag=f"ramp:v:{g.id}:lo")
        block.add_row(base, LE, case.dt2 * g.ramp_dn, tag=f"ramp:v:{g.id}:hi")
    build_lpac_branch(case, inc, z, st, cfg, block)
    load_p = [({}, d.p) for d in case.loads]
    load_q = [({}, d.q) for d in case.loads]
    build_bus_balance(case, inc, z, st, cfg, load_p, load_q, block)
    build_octagon_thermal(case, inc, z, st, cfg, block)
    build_vre_capability(case, st, cfg.n_s, cfg, pv_upper=pvmax, block=block)
    _theta_limits(case, z, st, cfg, block)
    for g in case.conv:
        block.add_row({vn("pc", st, g.id): 1.0, vn("pc", up, g.id): -1.0,
                       vn("pcp", st, g.id): -1.0, vn("pcm", st, g.id): 1.0},
                      EQ, 0.0, tag=f"shift:pc:{g.id}")
    for g in case.vre:
        block.add_row({vn("pv", st, g.id): 1.0, vn("pv", up, g.id): -1.0,
                       vn("pvp", st, g.id): -1.0, vn("pvm", st, g.id): 1.0},
                      EQ, 0.0, tag=f"shift:pv:{g.id}")
        dq = block.declare(vn("dqv", st, g.id))
        block.add_row({vn("qv", st, g.id): 1.0, vn("qv", up, g.id): -1.0,
                       dq: -1.0}, EQ, 0.0, tag=f"shift:qv:{g.id}")
    for bid in controlled_buses(case):
        dv = block.declare(vn("dvc", st, bid))
        block.add_row({vn("v", st, bid): 1.0, vn("v", up, bid): -1.0, dv: -1.0},
                      EQ, 0.0, tag=f"shift:vc:{bid}")
    _relabel(block, "C")
    return CompactStageModel(2, block.check(), eps_dim=len(case.vre))


def assemble_stage3(case: GridCase, inc: IncidenceSet | None = None,
                    cfg: RunConfig | None = None,
                    stage12: tuple = ()) -> CompactStageModel:
    """Contingency-parameterized replica with corrective controls.

    The contingency vector is symbolic: rows store its linear coefficients
    (family M) and its products with one named variable (family R), so the
    same template is stamped per working-set member or kept symbolic inside
    the pricing problem.
    """
    cfg = cfg or RunConfig()
    inc = inc or build_incidence(case)
    st, s2, s1 = "s3", "s2", "s1"
    nb = len(case.branches)
    c_off, b_off, v_off = 0, len(case.conv), len(case.conv) + nb
    block = LinearBlock()
    zub = 1.0 if cfg.allow_corrective else 0.0
    tv = TopologyVars(
        z1=[block.declare(vn("z", s1, br.id), BINARY, 0.0, 1.0) for br in case.branches],
        zo=[block.declare(vn("zo", st, br.id), BINARY, 0.0, 1.0) for br in case.branches],
        zt=[block.declare(vn("zt", st, br.id), BINARY, 0.0, 1.0) for br in case.branches],
        zup=[block.declare(vn("zup", st, br.id), CONTINUOUS, 0.0, zub) for br in case.branches],
        zdn=[block.declare(vn("zdn", st, br.id), CONTINUOUS, 0.0, zub) for br in case.branches],
        phi={i: vn(f"ph{i}", st, 0) for i in range(1, 6)},
        alp=[], alm=[], k_max=cfg.k_max, k_b=cfg.k_b, r=cfg.r, n_m=cfg.n_m,
        jnorm=1.0)
    _declare_voltages(case, st, block)
    for g in case.conv:
        block.declare(vn("pc", s2, g.id))
        block.declare(vn("pc", st, g.id), CONTINUOUS, min(0.0, g.p_min), max(0.0, g.p_max))
        block.declare(vn("qc", st, g.id), CONTINUOUS, min(0.0, g.q_min), max(0.0, g.q_max))
        block.declare(vn("pcp", st, g.id), CONTINUOUS, 0.0, case.dt3 * g.ramp_up)
        block.declare(vn("pcm", st, g.id), CONTINUOUS, 0.0, case.dt3 * g.ramp_dn)
        block.add_obj(vn("pcp", st, g.id), g.w_up)
        block.add_obj(vn("pcm", st, g.id), g.w_dn)
    for g in case.vre:
        block.declare(vn("pv", s2, g.id))
        block.declare(vn("pvmax", s2, g.id))
        block.declare(vn("qv", s2, g.id))
        block.declare(vn("pv", st, g.id), CONTINUOUS, 0.0, g.s_max)
        block.declare(vn("qv", st, g.id), CONTINUOUS, -g.s_max, g.s_max)
        block.declare(vn("pvp", st, g.id), CONTINUOUS, 0.0, case.dt3 * g.ramp_up)
        block.declare(vn("pvm", st, g.id), CONTINUOUS, 0.0, case.dt3 * g.ramp_dn)
        block.add_obj(vn("pvp", st, g.id), g.w_up)
        block.add_obj(vn("pvm", st, g.id), g.w_dn)
    load_p, load_q = [], []
    for d in case.loads:
        shed = block.declare(vn("shed", st, d.id), CONTINUOUS, 0.0, d.shed_max)
        pd3 = block.declare(vn("pd3", st, d.id), CONTINUOUS, d.p - d.shed_max, d.p)
        block.add_obj(shed, d.w_shed)
        block.add_row({pd3: 1.0, shed: 1.0}, EQ, d.p, tag=f"shed:def:{d.id}", family="F")
        load_p.append(({pd3: 1.0}, 0.0))
        # constant power factor while shedding; degenerate zero loads keep q
        if d.p != 0.0:
            load_q.append(({pd3: d.q / d.p}, 0.0))
        else:
            load_q.append(({}, d.q))
    for br in case.branches:
        block.add_obj(vn("zup", st, br.id), br.w_switch)
        block.add_obj(vn("zdn", st, br.id), br.w_switch)
    build_lpac_branch(case, inc, tv.zt, st, cfg, block)
    build_bus_balance(case, inc, tv.zt, st, cfg, load_p, load_q, block)
    build_octagon_thermal(case, inc, tv.zt, st, cfg, block)
    build_vre_capability(case, st, cfg.n_s, cfg, pv_upper=[None] * len(case.vre),
                         include_pf=False, block=block)
    _theta_limits(case, tv.zt, st, cfg, block)
    build_switching_logic(case, inc, tv, block)
    # contingency-gated ramping, output and coupling rows
    for i, g in enumerate(case.conv):
        block.add_row({vn("pcp", st, g.id): 1.0}, LE, 0.0, family="M",
                      tag=f"gate:rampup:c{g.id}", olin={c_off + i: -case.dt3 * g.ramp_up})
        block.add_row({vn("pcm", st, g.id): 1.0}, LE, 0.0, family="M",
                      tag=f"gate:rampdn:c{g.id}", olin={c_off + i: -case.dt3 * g.ramp_dn})
        block.add_row({vn("pc", st, g.id): -1.0}, LE, 0.0, family="M",
                      tag=f"gate:pmin:c{g.id}", olin={c_off + i: g.p_min})
        block.add_row({vn("pc", st, g.id): 1.0}, LE, 0.0, family="M",
                      tag=f"gate:pmax:c{g.id}", olin={c_off + i: -g.p_max})
        block.add_row({vn("qc", st, g.id): -1.0}, LE, 0.0, family="M",
                      tag=f"gate:qmin:c{g.id}", olin={c_off + i: g.q_min})
        block.add_row({vn("qc", st, g.id): 1.0}, LE, 0.0, family="M",
                      tag=f"gate:qmax:c{g.id}", olin={c_off + i: -g.q_max})
        block.add_row({vn("pc", st, g.id): 1.0, vn("pcp", st, g.id): -1.0,
                       vn("pcm", st, g.id): 1.0}, EQ, 0.0, family="R",
                      tag=f"gate:shiftp:c{g.id}",
                      obil=((c_off + i, vn("pc", s2, g.id), -1.0),))
    for j, g in enumerate(case.vre):
        tanmax = math.tan(math.acos(g.pf_min))
        block.add_row({vn("pvp", st, g.id): 1.0}, LE, 0.0, family="M",
                      tag=f"gate:rampup:v{g.id}", olin={v_off + j: -case.dt3 * g.ramp_up})
        block.add_row({vn("pvm", st, g.id): 1.0}, LE, 0.0, family="M",
                      tag=f"gate:rampdn:v{g.id}", olin={v_off + j: -case.dt3 * g.ramp_dn})
        block.add_row({vn("pv", st, g.id): 1.0}, LE, 0.0, family="R",
                      tag=f"gate:pvmax:v{g.id}",
                      obil=((v_off + j, vn("pvmax", s2, g.id), -1.0),))
        block.add_row({vn("qv", st, g.id): -1.0}, LE, 0.0, family="M",
                      tag=f"gate:qvmin:v{g.id}", olin={v_off + j: -g.s_max})
        block.add_row({vn("qv", st, g.id): 1.0}, LE, 0.0, family="R",
                      tag=f"gate:qvmax:v{g.id}",
                      obil=((v_off + j, vn("pv", st, g.id), -tanmax),))
        block.add_row({vn("pv", st, g.id): 1.0, vn("pvp", st, g.id): -1.0,
                       vn("pvm", st, g.id): 1.0}, EQ, 0.0, family="R",
                      tag=f"gate:shiftp:v{g.id}",
                      obil=((v_off + j, vn("pv", s2, g.id), -1.0),))
        dq = block.declare(vn("dqv", st, g.id))
        block.add_row({vn("qv", st, g.id): 1.0, vn("qv", s2, g.id): -1.0,
                       dq: -1.0}, EQ, 0.0, tag=f"shift:qv:{g.id}", family="F")
    for bid in controlled_buses(case):
        block.declare(vn("v", s2, bid))
        dv = block.declare(vn("dvc", st, bid))
        block.add_row({vn("v", st, bid): 1.0, vn("v", s2, bid): -1.0, dv: -1.0},
                      EQ, 0.0, tag=f"shift:vc:{bid}", family="F")
    lower = None
    if cfg.nc_stage3:
        for i in range(1, 6):
            block.declare(tv.phi[i], BINARY, 0.0, 1.0)
        alpha = default_alpha(len(case.buses))
        tv.jnorm = second_smallest_abs(alpha)
        lower = build_lower_level_lp(case, inc, tv.zo, tv.phi[2], alpha, cfg,
                                     block, prefix="s3ll")
        tv.alp = [n for n in lower.cont_vars if n.startswith("alp.")]
        tv.alm = [n for n in lower.cont_vars if n.startswith("alm.")]
        build_contingency_connectedness(case, inc, tv, alpha, cfg, block)
    _relabel(block, "F")
    return CompactStageModel(3, block.check(), lower_level=lower, tvars=tv,
                             eps_dim=len(case.vre))


def tighten_bounds(block: LinearBlock, case: GridCase):
    """Solution-preserving variable boxes and reference pinning.

    Angles and connectedness potentials are shift-invariant (rows only use
    differences), so the lowest-id bus is pinned to zero and every other
    value boxed by the worst-case path sum; flows, voltage products and
    reactive splits are boxed by the limits already implied by gated rows.
    Tight boxes do not change any optimum but help the LP relaxation.
    """
    n = len(case.buses)
    root = min(b.id for b in case.buses)
    th_spread = sum(br.theta_max for br in case.branches) + 1.0
    pot_box = 2.0 * n * n + 2.0 * n
    flw_box = 2.0 * n + 2.0
    smax = {br.id: br.s_max for br in case.branches}
    dqbox = {br.id: abs(br.b) * 0.5 + 1.0 for br in case.branches}
    vmax = max(b.v_max for b in case.buses)
    for name, d in list(block.vars.items()):
        sym, _, eid = name.split(".", 2)
        if d.kind == BINARY:
            continue
        if sym in ("alp", "alm") and d.ub == INF:
            block.vars[name] = replace(d, ub=pot_box)
            continue
        if d.lb != -INF or d.ub != INF:
            continue
        if sym == "th":
            lo, hi = (0.0, 0.0) if eid == str(root) else (-th_spread, th_spread)
        elif sym == "pot":
            lo, hi = (0.0, 0.0) if eid == str(root) else (-pot_box, pot_box)
        elif sym == "flw":
            lo, hi = -flw_box, flw_box
        elif sym in ("pfb", "ptb", "qfb", "qtb"):
            s = smax[int(eid)]
            lo, hi = -s, s
        elif sym in ("dqf", "dqt"):
            lo, hi = -dqbox[int(eid)], dqbox[int(eid)]
        elif sym == "u":
            lo, hi = 0.0, vmax
        elif sym == "dvc":
            lo, hi = -1.0, 1.0
        elif sym == "dqv":
            s = 2.0 * max((g.s_max for g in case.vre), default=1.0)
            lo, hi = -s, s
        else:
            continue
        block.vars[name] = replace(d, kind=d.kind, lb=lo, ub=hi)


def build_stage_templates(case: GridCase, cfg: RunConfig):
    inc = build_incidence(case)
    s1 = assemble_stage1(case, inc, cfg)
    s2 = assemble_stage2(case, inc, cfg, s1)
    s3 = assemble_stage3(case, inc, cfg, (s1, s2))
    for s in (s1, s2, s3):
        tighten_bounds(s.block, case)
    return inc, s1, s2, s3
