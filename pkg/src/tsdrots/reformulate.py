"""Single tractable extensive form of the three-stage model.

Pipeline: replace the third stage's argmin by its KKT system with Big-M
complementarity, slack every recourse row so any upstream decision leaves
the downstream problems feasible (penalized slacks), dualize the worst-case
expectation over the moment set into epigraph rows per working-set
contingency, and expand over the forecast-error scenarios into one MILP.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .blocks import (BINARY, CONTINUOUS, EQ, GE, LE, LinearBlock, Row, clone,
                     stamp, to_ge)
from .linearize import vn
from .stages import CompactStageModel, build_stage_templates
from .uncertainty import AmbiguitySet, ContingencyVector, ScenarioSet


class ReformulationError(ValueError):
    pass


def kkt_single_level(stage3: CompactStageModel, cfg) -> CompactStageModel:
    """Swap the lower-level argmin for primal feasibility, dual feasibility,
    stationarity and indicator-gated complementarity.

    The primal-side complementarity Big-M is 5x the largest gating constant
    already contained in each row; rows carrying no Big-M fall back to the
    dual-side constant.
    """
    ll = stage3.lower_level
    if ll is None:
        raise ReformulationError("stage-3 model carries no lower-level family")
    block = LinearBlock()
    block.merge(stage3.block)
    upper = set(ll.upper_vars)
    lam, xi = [], []
    for i, row in enumerate(ll.rows):
        assert row.sense == LE
        block.rows.append(replace(row, tag=f"kkt:prim:{i}", family="F"))
        lam.append(block.declare(vn("lld", "s3", i), CONTINUOUS, 0.0))
        xi.append(block.declare(vn("llx", "s3", i), BINARY, 0.0, 1.0))
        contained = max([abs(c) for n, c in row.coeffs.items() if n in upper]
                        + [abs(row.rhs)], default=0.0)
        mp = cfg.bigm_comp_factor * contained if contained > 100.0 else cfg.bigm_dual
        # u - Vz - Wx <= M_p (1 - xi): slack forced to 0 when xi = 1
        comp = {n: -c for n, c in row.coeffs.items()}
        comp[xi[i]] = mp
        block.add_row(comp, LE, mp - row.rhs, tag=f"kkt:comp:p:{i}", family="F")
        block.add_row({lam[i]: 1.0, xi[i]: -cfg.kkt_dual_cap}, LE, 0.0,
                      tag=f"kkt:comp:d:{i}", family="F")
    for v in ll.cont_vars:
        srow = {}
        for i, row in enumerate(ll.rows):
            c = row.coeffs.get(v, 0.0)
            if c:
                srow[lam[i]] = c
        # stationarity of min l'x over rows Wx <= u - Vz: l + W'lambda = 0
        block.add_row(srow, EQ, -ll.objective.get(v, 0.0),
                      tag=f"kkt:stat:{v}", family="F")
    return CompactStageModel(3, block.check(), lower_level=ll,
                             tvars=stage3.tvars, eps_dim=stage3.eps_dim)


_SLACK_EXEMPT = ("kkt:prim", "kkt:stat")


def penalize_rcr(stage2: CompactStageModel, stage3: CompactStageModel,
                 sigma2, sigma3):
    """Recourse penalization: the availability equality gains a scalar slack,
    every third-stage row (KKT primal/stationarity excepted) gains another;
    both are priced so they vanish at any optimum of a feasible instance."""
    if sigma2 <= 0 or sigma3 <= 0:
        raise ReformulationError("penalty coefficients must be positive")
    b2 = LinearBlock()
    b2.merge(stage2.block)
    y2 = b2.declare(vn("y2", "s2", 0), CONTINUOUS, 0.0)
    b2.add_obj(y2, sigma2)
    rows2 = []
    for r in b2.rows:
        if r.tag.startswith("couple:pvmax"):
            lo = dict(r.coeffs)
            lo[y2] = 1.0
            rows2.append(Row(lo, GE, r.rhs, r.tag + ":lo", r.family, dict(r.eps)))
            hi = dict(r.coeffs)
            hi[y2] = -1.0
            rows2.append(Row(hi, LE, r.rhs, r.tag + ":hi", r.family, dict(r.eps)))
        else:
            rows2.append(r)
    b2.rows = rows2
    s2 = CompactStageModel(2, b2.check(), eps_dim=stage2.eps_dim)

    b3 = LinearBlock()
    b3.merge(stage3.block)
    y3 = b3.declare(vn("y3", "s3", 0), CONTINUOUS, 0.0)
    b3.add_obj(y3, sigma3)
    rows3 = []
    for r in to_ge(b3.rows):
        if not r.tag.startswith(_SLACK_EXEMPT):
            coeffs = dict(r.coeffs)
            coeffs[y3] = coeffs.get(y3, 0.0) + 1.0
            r = replace(r, coeffs=coeffs)
        rows3.append(r)
    b3.rows = rows3
    s3 = CompactStageModel(3, b3.check(), lower_level=stage3.lower_level,
                           tvars=stage3.tvars, eps_dim=stage3.eps_dim)
    return s2, s3


def build_tractable(case, cfg):
    """Stage templates ready for scenario/contingency expansion."""
    inc, s1, s2, s3 = build_stage_templates(case, cfg)
    if s3.lower_level is not None:
        s3 = kkt_single_level(s3, cfg)
    s2p, s3p = penalize_rcr(s2, s3, cfg.sigma2_for(case), cfg.sigma3_for(case))
    return inc, s1, s2p, s3p


# -- scenario / contingency expansion ---------------------------------------


def stage_of(name):
    """Stage tag of a variable: the middle token of `<sym>.<scope>.<eid>`."""
    tok = name.split(".", 2)[1]
    if tok.startswith("s3"):
        return 3
    if tok.startswith("s2"):
        return 2
    return 1


def scope_rename(eps_id, o_id=None):
    def f(name):
        st = stage_of(name)
        if st == 3:
            if o_id is None:
                raise ReformulationError(f"stage-3 name {name} outside an o-scope")
            return f"{name}@e{eps_id}o{o_id}"
        if st == 2:
            return f"{name}@e{eps_id}"
        return name
    return f


@dataclass
class DualizedStage2:
    """Per-scenario block: stage-2 copy, moment-dual variables, one
    third-stage copy and epigraph row per working-set contingency."""

    eps_id: int
    block: LinearBlock
    objective: dict                 # c2-copy + moment-dual prices
    c2: dict                        # stage-2 copy cost vector alone
    omega: list
    lam: list = field(default_factory=list)
    lam_const: str = ""
    c3: dict = field(default_factory=dict)   # o index -> cost dict of its copy


def dualize_dro(stage2p: CompactStageModel, stage3p: CompactStageModel,
                amb: AmbiguitySet, omega_eps, eps_vec, eps_id=0) -> DualizedStage2:
    if not omega_eps:
        raise ReformulationError("working contingency set must be nonempty")
    block = LinearBlock()
    s2c = stamp(clone(stage2p.block, scope_rename(eps_id)), eps=np.asarray(eps_vec))
    c2 = dict(s2c.obj)
    s2c.obj = {}
    block.merge(s2c)
    n2 = amb.n
    lam = [block.declare(f"dro.{eps_id}.{i}", CONTINUOUS, 0.0) for i in range(2 * n2)]
    lamc = block.declare(f"droc.{eps_id}", CONTINUOUS)
    objective = dict(c2)
    otil = amb.o_tilde()
    for i in range(2 * n2):
        if otil[i]:
            objective[lam[i]] = objective.get(lam[i], 0.0) + float(otil[i])
    objective[lamc] = objective.get(lamc, 0.0) + 1.0
    d = DualizedStage2(eps_id, block, objective, c2, list(omega_eps), lam, lamc)
    for j, cv in enumerate(omega_eps):
        s3c = stamp(clone(stage3p.block, scope_rename(eps_id, j)), o=cv.as_array())
        c3 = dict(s3c.obj)
        s3c.obj = {}
        block.merge(s3c)
        row = {}
        term = amb.dual_term(cv)
        for i in range(2 * n2):
            if term[i]:
                row[lam[i]] = term[i]
        row[lamc] = 1.0
        for nme, c in c3.items():
            row[nme] = row.get(nme, 0.0) - c
        block.add_row(row, GE, 0.0, tag=f"epi:{eps_id}:{j}", family="E")
        d.c3[j] = c3
    return d


def assemble_extensive(stage1: CompactStageModel, dualized: list,
                       probs) -> LinearBlock:
    """Master/monolith MILP: stage-1 block plus probability-weighted
    scenario blocks."""
    probs = np.asarray(probs, dtype=float)
    if len(probs) != len(dualized):
        raise ReformulationError("one probability per scenario block required")
    if abs(probs.sum() - 1.0) > 1e-9 or np.any(probs < -1e-12):
        raise ReformulationError("probabilities must form a distribution")
    master = LinearBlock()
    master.merge(stage1.block)
    for p, d in zip(probs, dualized):
        master.merge(d.block)
        for nme, c in d.objective.items():
            master.add_obj(nme, float(p) * c)
    return master.check()
