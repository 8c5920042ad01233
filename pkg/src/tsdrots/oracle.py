"""Brute-force verifiers: monolithic solve, connectedness enumeration,
exact AC residual evaluation, and the sequential evaluation protocol.

This module intentionally re-implements the single-level and dual
reformulation steps inline (it never imports the decomposition machinery),
so agreement between the solver path and these oracles is evidence rather
than tautology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .blocks import (BINARY, CONTINUOUS, EQ, GE, LE, INF, LinearBlock, Row,
                     clone, negated, stamp, substitute, to_ge)
from .config import RunConfig
from .linearize import vn
from .network import (GridCase, build_incidence, case_edges,
                      connected_components, default_alpha)
from .solver import SolverError, SolverHandle, solve
from .stages import build_stage_templates
from .topology import build_connectedness_stage1
from .uncertainty import (AmbiguitySet, ContingencyVector, ScenarioSet,
                          enumerate_support, feasible_distribution,
                          worst_case_distribution)


class OracleError(RuntimeError):
    pass


# -- independent single-level + dual expansion -------------------------------


def _kkt_rows(block: LinearBlock, ll, cfg: RunConfig):
    """Oracle-side single-level replacement of the argmin block."""
    upper = set(ll.upper_vars)
    lam = []
    for i, row in enumerate(ll.rows):
        block.rows.append(replace(row, tag=f"okkt:prim:{i}", family="F"))
        l = block.declare(vn("lld", "s3", i), CONTINUOUS, 0.0)
        x = block.declare(vn("llx", "s3", i), BINARY, 0.0, 1.0)
        lam.append(l)
        contained = max([abs(c) for n, c in row.coeffs.items() if n in upper]
                        + [abs(row.rhs)], default=0.0)
        mp = cfg.bigm_comp_factor * contained if contained > 100.0 else cfg.bigm_dual
        comp = {n: -c for n, c in row.coeffs.items()}
        comp[x] = mp
        block.add_row(comp, LE, mp - row.rhs, tag=f"okkt:comp:p:{i}", family="F")
        block.add_row({l: 1.0, x: -cfg.kkt_dual_cap}, LE, 0.0,
                      tag=f"okkt:comp:d:{i}", family="F")
    for v in ll.cont_vars:
        srow = {lam[i]: r.coeffs[v] for i, r in enumerate(ll.rows) if v in r.coeffs}
        block.add_row(srow, EQ, -ll.objective.get(v, 0.0),
                      tag=f"okkt:stat:{v}", family="F")


def _oracle_stage3(s3, cfg: RunConfig, sigma3):
    """Stage-3 template with KKT rows, >= normalization and recourse slack."""
    blk = LinearBlock()
    blk.merge(s3.block)
    if s3.lower_level is not None:
        _kkt_rows(blk, s3.lower_level, cfg)
    y3 = blk.declare(vn("y3", "s3", 0), CONTINUOUS, 0.0)
    blk.add_obj(y3, sigma3)
    rows = []
    for r in to_ge(blk.rows):
        if not r.tag.startswith(("okkt:prim", "okkt:stat")):
            coeffs = dict(r.coeffs)
            coeffs[y3] = coeffs.get(y3, 0.0) + 1.0
            r = replace(r, coeffs=coeffs)
        rows.append(r)
    blk.rows = rows
    return blk.check()


def _oracle_stage2(s2, cfg: RunConfig, sigma2):
    blk = LinearBlock()
    blk.merge(s2.block)
    y2 = blk.declare(vn("y2", "s2", 0), CONTINUOUS, 0.0)
    blk.add_obj(y2, sigma2)
    rows = []
    for r in blk.rows:
        if r.tag.startswith("couple:pvmax"):
            lo = dict(r.coeffs)
            lo[y2] = 1.0
            rows.append(Row(lo, GE, r.rhs, r.tag + ":lo", r.family, dict(r.eps)))
            hi = dict(r.coeffs)
            hi[y2] = -1.0
            rows.append(Row(hi, LE, r.rhs, r.tag + ":hi", r.family, dict(r.eps)))
        else:
            rows.append(r)
    blk.rows = rows
    return blk.check()


def _scope(eps_id, o_id=None):
    def f(name):
        tok = name.split(".", 2)[1]
        if tok.startswith("s3"):
            return f"{name}#e{eps_id}o{o_id}"
        if tok.startswith("s2"):
            return f"{name}#e{eps_id}"
        return name
    return f


@dataclass
class OracleTemplates:
    inc: object
    s1: object
    s2blk: LinearBlock
    s3blk: LinearBlock
    s3obj: dict
    eps_dim: int


def oracle_templates(case: GridCase, cfg: RunConfig) -> OracleTemplates:
    inc, s1, s2, s3 = build_stage_templates(case, cfg)
    s2blk = _oracle_stage2(s2, cfg, cfg.sigma2_for(case))
    s3blk = _oracle_stage3(s3, cfg, cfg.sigma3_for(case))
    return OracleTemplates(inc, s1, s2blk, s3blk, dict(s3blk.obj), len(case.vre))


def _expand(tpl: OracleTemplates, case, scen: ScenarioSet, amb: AmbiguitySet,
            omega, fixed_x=None):
    """Scenario-expanded MILP with optional fixed first-stage decisions."""
    master = LinearBlock()
    master.merge(tpl.s1.block)
    n = amb.n
    otil = amb.o_tilde()
    for e in range(len(scen)):
        p = float(scen.prob[e])
        s2c = stamp(clone(tpl.s2blk, _scope(e)), eps=scen.eps[e])
        c2 = dict(s2c.obj)
        s2c.obj = {}
        master.merge(s2c)
        for nme, c in c2.items():
            master.add_obj(nme, p * c)
        lam = [master.declare(f"olam.{e}.{i}", CONTINUOUS, 0.0) for i in range(2 * n)]
        lamc = master.declare(f"olamc.{e}")
        for i in range(2 * n):
            if otil[i]:
                master.add_obj(lam[i], p * float(otil[i]))
        master.add_obj(lamc, p)
        for j, cv in enumerate(omega):
            s3c = stamp(clone(tpl.s3blk, _scope(e, j)), o=cv.as_array())
            c3 = dict(s3c.obj)
            s3c.obj = {}
            master.merge(s3c)
            term = amb.dual_term(cv)
            row = {lam[i]: term[i] for i in range(2 * n) if term[i]}
            row[lamc] = 1.0
            for nme, c in c3.items():
                row[nme] = row.get(nme, 0.0) - c
            master.add_row(row, GE, 0.0, tag=f"oepi:{e}:{j}")
    if fixed_x:
        master = substitute(master, fixed_x)
    return master.check()


def extensive_solve(case: GridCase, scen: ScenarioSet, amb: AmbiguitySet,
                    cfg: RunConfig, cap=400, handle=None, templates=None):
    """Monolithic ground truth with the full explicit support."""
    omega = enumerate_support(case.n_components, cfg.k_max, cap=cfg.omega_cap)
    if len(omega) * len(scen) > cap:
        raise OracleError(
            f"{len(omega)} contingencies x {len(scen)} scenarios exceeds cap {cap}")
    tpl = templates or oracle_templates(case, cfg)
    master = _expand(tpl, case, scen, amb, omega)
    handle = handle or SolverHandle(mip_gap=cfg.mip_gap, time_limit=cfg.time_limit)
    sol = solve(master, kind="milp", handle=handle).require_optimal("extensive")
    return sol.objective, sol, omega


# -- connectedness enumeration ------------------------------------------------


def synthetic_case(n_nodes, edges) -> GridCase:
    from .network import Branch, Bus
    return GridCase(buses=[Bus(i + 1) for i in range(n_nodes)],
                    branches=[Branch(k + 1, u + 1, v + 1, g=0.0, b=-1.0)
                              for k, (u, v) in enumerate(edges)]).validate()


def connectedness_enumerate(n_nodes, edges, cfg=None, builder=None):
    """Compare block LP feasibility against union-find over every status
    vector; returns the list of mismatches (empty = exact)."""
    cfg = cfg or RunConfig(bigm_physical=1e4)
    case = synthetic_case(n_nodes, edges)
    inc = build_incidence(case)
    alpha = default_alpha(n_nodes)
    build = builder or build_connectedness_stage1
    template = LinearBlock()
    z = [template.declare(vn("z", "s1", br.id), CONTINUOUS, 0.0, 1.0)
         for br in case.branches]
    build(case, inc, z, alpha, cfg, template)
    mismatches = []
    for mask in range(2 ** len(edges)):
        status = [(mask >> k) & 1 for k in range(len(edges))]
        blk = substitute(template, {z[k]: float(status[k]) for k in range(len(edges))})
        feas = solve(blk, kind="lp").optimal
        conn = connected_components(edges, n_nodes, status) == 1
        if feas != conn:
            mismatches.append((tuple(status), feas, conn))
    return mismatches


# -- exact AC evaluation ------------------------------------------------------


@dataclass
class StageState:
    """One stage's operating point in physical quantities."""

    v: dict                  # bus id -> magnitude
    theta: dict              # bus id -> angle
    pc: dict
    qc: dict
    pv: dict
    qv: dict
    z: dict                  # branch id -> status
    p_load: dict             # load id -> served active power
    q_load: dict


def state_from_values(case: GridCase, values: dict, stage: str, scope="") -> StageState:
    def get(sym, eid):
        return values[f"{sym}.{stage}.{eid}{scope}"]

    zsym = {"s1": ("z", "s1"), "s2": ("z", "s1"), "s3": ("zt", "s3")}[stage]
    z = {}
    for br in case.branches:
        key = f"{zsym[0]}.{zsym[1]}.{br.id}"
        if stage == "s3":
            key += scope
        elif stage == "s2" and scope:
            key = f"z.s1.{br.id}"
        z[br.id] = values[key]
    p_load, q_load = {}, {}
    for d in case.loads:
        if stage == "s3":
            p_load[d.id] = get("pd3", d.id)
            q_load[d.id] = (d.q / d.p) * p_load[d.id] if d.p else d.q
        else:
            p_load[d.id], q_load[d.id] = d.p, d.q
    return StageState(
        v={b.id: get("v", b.id) for b in case.buses},
        theta={b.id: get("th", b.id) for b in case.buses},
        pc={g.id: get("pc", g.id) for g in case.conv},
        qc={g.id: get("qc", g.id) for g in case.conv},
        pv={g.id: get("pv", g.id) for g in case.vre},
        qv={g.id: get("qv", g.id) for g in case.vre},
        z=z, p_load=p_load, q_load=q_load)


def branch_flows_exact(br, state: StageState):
    if state.z[br.id] < 0.5:
        return 0.0, 0.0, 0.0, 0.0
    g, b = br.g, br.b
    vf, vt = state.v[br.from_bus], state.v[br.to_bus]
    th = state.theta[br.from_bus] - state.theta[br.to_bus]
    ct, st = math.cos(th), math.sin(th)
    pfb = g * vf * vf - vf * vt * (g * ct + b * st)
    ptb = g * vt * vt - vf * vt * (g * ct - b * st)
    qfb = -b * vf * vf + vf * vt * (b * ct - g * st)
    qtb = -b * vt * vt + vf * vt * (b * ct + g * st)
    return pfb, ptb, qfb, qtb


def ac_residual(case: GridCase, state: StageState, threshold=1e-4):
    """Exact nonlinear mismatch per bus at the given operating point."""
    dp = {b.id: 0.0 for b in case.buses}
    dq = {b.id: 0.0 for b in case.buses}
    for g in case.conv:
        dp[g.bus] += state.pc[g.id]
        dq[g.bus] += state.qc[g.id]
    for g in case.vre:
        dp[g.bus] += state.pv[g.id]
        dq[g.bus] += state.qv[g.id]
    for d in case.loads:
        dp[d.bus] -= state.p_load[d.id]
        dq[d.bus] -= state.q_load[d.id]
    for br in case.branches:
        pfb, ptb, qfb, qtb = branch_flows_exact(br, state)
        dp[br.from_bus] -= pfb
        dp[br.to_bus] -= ptb
        dq[br.from_bus] -= qfb
        dq[br.to_bus] -= qtb
        if state.z[br.id] >= 0.5:
            for bus in (br.from_bus, br.to_bus):
                v2 = state.v[bus] ** 2
                dp[bus] -= br.g_ch * v2
                dq[bus] += br.b_ch * v2
    for b in case.buses:
        v2 = state.v[b.id] ** 2
        dp[b.id] -= b.g_sh * v2
        dq[b.id] += b.b_sh * v2
    worst_p = max(abs(x) for x in dp.values())
    worst_q = max(abs(x) for x in dq.values())
    return {"dp": dp, "dq": dq, "max_p": worst_p, "max_q": worst_q,
            "feasible": max(worst_p, worst_q) <= threshold}


def newton_ac(case: GridCase, z: dict, p_inj: dict, q_inj: dict,
              slack_bus=None, iters=50, tol=1e-11):
    """Reference AC solve: slack bus plus PQ buses, flat start.

    Returns a StageState-compatible (v, theta) pair or None on divergence.
    """
    bix = case.bus_index()
    n = len(case.buses)
    slack = bix[slack_bus] if slack_bus is not None else 0
    ybus = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if z[br.id] < 0.5:
            continue
        u, w = bix[br.from_bus], bix[br.to_bus]
        y = br.g + 1j * br.b
        ych = br.g_ch + 1j * br.b_ch
        ybus[u, u] += y + ych
        ybus[w, w] += y + ych
        ybus[u, w] -= y
        ybus[w, u] -= y
    for b in case.buses:
        ybus[bix[b.id], bix[b.id]] += b.g_sh + 1j * b.b_sh
    pq = [i for i in range(n) if i != slack]
    sinj = np.array([p_inj.get(b.id, 0.0) + 1j * q_inj.get(b.id, 0.0)
                     for b in case.buses])

    def mismatch(x):
        th = np.zeros(n)
        vm = np.ones(n)
        th[pq] = x[:len(pq)]
        vm[pq] = x[len(pq):]
        vc = vm * np.exp(1j * th)
        s = vc * np.conj(ybus @ vc)
        mis = sinj - s
        return np.concatenate([mis[pq].real, mis[pq].imag])

    x = np.zeros(2 * len(pq))
    x[len(pq):] = 1.0
    for _ in range(iters):
        f = mismatch(x)
        if np.max(np.abs(f)) < tol:
            break
        jac = np.zeros((len(f), len(x)))
        h = 1e-7
        for j in range(len(x)):
            xp = x.copy()
            xp[j] += h
            jac[:, j] = (mismatch(xp) - f) / h
        try:
            x = x + np.linalg.solve(jac, f)
        except np.linalg.LinAlgError:
            return None
    else:
        return None
    th = np.zeros(n)
    vm = np.ones(n)
    th[pq] = x[:len(pq)]
    vm[pq] = x[len(pq):]
    v = {b.id: float(vm[bix[b.id]]) for b in case.buses}
    theta = {b.id: float(th[bix[b.id]]) for b in case.buses}
    return v, theta


# -- connectedness ratios and the evaluation protocol -------------------------


def zeta_ratios(case: GridCase, topologies, k_values):
    """Fraction of (topology, branch-only N-k contingency) pairs whose
    post-contingency component count matches the all-closed baseline."""
    import itertools
    edges = case_edges(case)
    n = len(case.buses)
    out = {}
    out[0] = float(np.mean([
        connected_components(edges, n, [zt[br.id] for br in case.branches]) == 1
        for zt in topologies]))
    for k in k_values:
        good = total = 0
        for fail in itertools.combinations(range(len(edges)), k):
            base = [0 if i in fail else 1 for i in range(len(edges))]
            cc_base = connected_components(edges, n, base)
            for zt in topologies:
                post = [base[i] * int(round(zt[case.branches[i].id]))
                        for i in range(len(edges))]
                total += 1
                good += int(connected_components(edges, n, post) == cc_base)
        out[k] = good / total if total else 1.0
    return out


@dataclass
class Decisions:
    """First- and second-stage decisions of any model variant."""

    x: dict
    x_eps: list = field(default_factory=list)
    label: str = ""


def decisions_from_solution(case, values, n_scen, scope2=lambda e: f"@e{e}"):
    x = {n: v for n, v in values.items()
         if n.split(".", 2)[1] in ("s1", "s1cc") and "@" not in n and "#" not in n}
    x_eps = []
    for e in range(n_scen):
        tag = scope2(e)
        xe = {}
        for n, v in values.items():
            if n.endswith(tag) and "o" not in n.split(tag)[-1]:
                base = n[: -len(tag)]
                if base.split(".", 2)[1].startswith("s2"):
                    xe[base] = v
        x_eps.append(xe)
    return Decisions(x, x_eps)


def third_stage_value(tpl: OracleTemplates, x, x_eps, cv: ContingencyVector,
                      handle) -> float:
    up = {}
    for nme in tpl.s3blk.vars:
        tok = nme.split(".", 2)[1]
        if tok.startswith("s3"):
            continue
        up[nme] = x[nme] if not tok.startswith("s2") else x_eps[nme]
    blk = stamp(substitute(tpl.s3blk, up), o=cv.as_array())
    return solve(blk, kind="milp", handle=handle).require_optimal("tcc").objective


def evaluate_protocol(case: GridCase, cfg: RunConfig, decisions: Decisions,
                      scen: ScenarioSet, omega, dist="wcd", amb=None,
                      handle=None, templates=None):
    """Sequential evaluation: fixed stage-1, per-scenario stage-2 cost, per
    (scenario, contingency) third-stage cost, aggregated under the designated
    distribution ('wcd', 'wcc', 'rsd:<seed>', or an explicit mapping)."""
    tpl = templates or oracle_templates(case, cfg)
    handle = handle or SolverHandle(mip_gap=cfg.mip_gap, time_limit=cfg.time_limit)
    c1 = sum(c * decisions.x[k] for k, c in tpl.s1.block.obj.items())
    per_eps = []
    q1 = c1
    for e in range(len(scen)):
        if decisions.x_eps:
            xe = decisions.x_eps[e]
            c2 = _c2_value(tpl, xe)
        else:
            xe, c2 = _resolve_stage2(tpl, case, decisions.x, scen, e, amb, omega, handle)
        tcc_vals = {cv: third_stage_value(tpl, decisions.x, xe, cv, handle)
                    for cv in omega}
        tcc, dist_used = _aggregate(tcc_vals, dist, amb, omega)
        per_eps.append({"c2": c2, "tcc": tcc, "values": tcc_vals,
                        "dist": dist_used})
        q1 += scen.prob[e] * (c2 + tcc)
    return q1, {"c1": c1, "per_eps": per_eps}


def _c2_value(tpl, xe):
    return sum(c * xe[k] for k, c in tpl.s2blk.obj.items() if k in xe)


def _resolve_stage2(tpl, case, x, scen, e, amb, omega, handle):
    one = ScenarioSet(scen.eps[e: e + 1], np.array([1.0]))
    blk = _expand(tpl, case, one, amb, omega, fixed_x=x)
    sol = solve(blk, kind="milp", handle=handle).require_optimal("stage2-eval")
    xe = {}
    for nme in tpl.s2blk.vars:
        if nme.split(".", 2)[1].startswith("s2"):
            xe[nme] = sol.values[f"{nme}#e0"]
    return xe, _c2_value(tpl, xe)


def _aggregate(tcc_vals, dist, amb, omega):
    if isinstance(dist, dict):
        return sum(dist.get(cv, 0.0) * v for cv, v in tcc_vals.items()), dist
    if dist == "wcc":
        return max(tcc_vals.values()), "wcc"
    if dist == "wcd":
        d, expect, _ = worst_case_distribution(tcc_vals, amb)
        return expect, d
    if isinstance(dist, str) and dist.startswith("rsd"):
        seed = int(dist.split(":")[1]) if ":" in dist else 0
        rng = np.random.default_rng(seed)
        m = rng.uniform(amb.o_min, amb.o_max)
        d = feasible_distribution(m, list(tcc_vals), amb, seed=seed)
        if d is None:
            raise OracleError("no distribution matches the sampled moments")
        return sum(d.get(cv, 0.0) * v for cv, v in tcc_vals.items()), d
    raise OracleError(f"unknown distribution spec {dist!r}")
