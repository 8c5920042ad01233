"""Model variants for the evaluation studies.

Switching involvement S1..S4 and uncertainty presence U1..U4 map onto
configuration toggles; the stochastic (fixed-distribution) and robust
(worst-contingency) alternatives to the moment-set treatment are built as
explicit-support masters for desk-scale comparisons.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .blocks import CONTINUOUS, GE, LinearBlock, clone, stamp
from .config import RunConfig
from .reformulate import build_tractable, scope_rename
from .solver import SolverHandle, solve
from .uncertainty import ContingencyVector, ScenarioSet


def s_variant(cfg: RunConfig, s: int) -> RunConfig:
    """S1: switching at both stages; S2: first stage only; S3: third stage
    only; S4: none."""
    table = {1: (True, True), 2: (True, False), 3: (False, True),
             4: (False, False)}
    ots, corr = table[s]
    return replace(cfg, allow_ots=ots, allow_corrective=corr)


def u_variant(cfg: RunConfig, u: int, scen: ScenarioSet) -> tuple:
    """U1: both uncertainties; U2: forecast errors only; U3: contingencies
    only; U4: none.  Returns (config, scenario set)."""
    det = ScenarioSet(np.zeros((1, scen.eps.shape[1])), np.ones(1), seed=scen.seed)
    if u == 1:
        return cfg, scen
    if u == 2:
        return replace(cfg, k_max=0, k_b=0), scen
    if u == 3:
        return cfg, det
    if u == 4:
        return replace(cfg, k_max=0, k_b=0), det
    raise ValueError("u must be 1..4")


def m_variant(cfg: RunConfig, m: int) -> RunConfig:
    """M1: both connectedness blocks; M2: first-stage only; M3: third-stage
    only; M4: none."""
    table = {1: (True, True), 2: (True, False), 3: (False, True),
             4: (False, False)}
    s1, s3 = table[m]
    return replace(cfg, nc_stage1=s1, nc_stage3=s3)


def _expand_third(master, s2p, s3p, scen, omega, weights, epi_to=None):
    """Common scenario/contingency expansion with per-copy cost handling."""
    c3_dicts = []
    for e in range(len(scen)):
        p = float(scen.prob[e])
        s2c = stamp(clone(s2p.block, scope_rename(e)), eps=scen.eps[e])
        c2 = dict(s2c.obj)
        s2c.obj = {}
        master.merge(s2c)
        for nme, c in c2.items():
            master.add_obj(nme, p * c)
        row_t = None
        if epi_to is not None:
            row_t = master.declare(f"tmax.{e}", CONTINUOUS)
            master.add_obj(row_t, p)
        per_e = {}
        for j, cv in enumerate(omega):
            s3c = stamp(clone(s3p.block, scope_rename(e, j)), o=cv.as_array())
            c3 = dict(s3c.obj)
            s3c.obj = {}
            master.merge(s3c)
            per_e[cv] = c3
            if epi_to is not None:
                row = {row_t: 1.0}
                for nme, c in c3.items():
                    row[nme] = row.get(nme, 0.0) - c
                master.add_row(row, GE, 0.0, tag=f"romax:{e}:{j}")
            else:
                w = weights.get(cv, 0.0)
                for nme, c in c3.items():
                    master.add_obj(nme, p * w * c)
        c3_dicts.append(per_e)
    return c3_dicts


def solve_so(case, cfg: RunConfig, scen: ScenarioSet, omega, dist,
             handle=None, templates=None):
    """Expected recourse under one fixed contingency distribution."""
    inc, s1, s2p, s3p = templates or build_tractable(case, cfg)
    master = LinearBlock()
    master.merge(s1.block)
    _expand_third(master, s2p, s3p, scen, [cv for cv in omega if dist.get(cv, 0.0)]
                  or list(omega)[:1], dist)
    handle = handle or SolverHandle(mip_gap=cfg.mip_gap, time_limit=cfg.time_limit)
    sol = solve(master.check(), kind="milp", handle=handle).require_optimal("so")
    return sol


def solve_ro(case, cfg: RunConfig, scen: ScenarioSet, omega, handle=None,
             templates=None):
    """Worst-contingency recourse (support only, no distributional data)."""
    inc, s1, s2p, s3p = templates or build_tractable(case, cfg)
    master = LinearBlock()
    master.merge(s1.block)
    _expand_third(master, s2p, s3p, scen, list(omega), {}, epi_to=True)
    handle = handle or SolverHandle(mip_gap=cfg.mip_gap, time_limit=cfg.time_limit)
    sol = solve(master.check(), kind="milp", handle=handle).require_optimal("ro")
    return sol
