"""Nested column-and-constraint generation with a Dantzig-Wolfe pricing loop.

Outer loop: solve the master (scenario-expanded dual form restricted to
per-scenario working contingency sets), then for each scenario run the DW
procedure at the fixed trial decisions: alternate restricted worst-case
expectation solves with a pricing problem that searches all of the
contingency support for the largest epigraph violation.  The pricing problem
is itself solved by an inner CCG over enumerated binary-recourse columns,
using the dual of the continuous recourse LP with Big-M products between the
contingency vector and the dual prices.

Upper bounds assemble the trial decisions' cost with the restricted
expectation plus the pricing value, which stays valid for any sign of the
pricing value; a flag records when a DW loop exits through the iteration cap
(the bound is then built from a pricing value above tolerance).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .blocks import (BINARY, CONTINUOUS, EQ, GE, INF, LE, LinearBlock, Row,
                     substitute)
from .config import RunConfig
from .reformulate import (assemble_extensive, build_tractable, dualize_dro,
                          scope_rename, stage_of)
from .solver import SolverError, SolverHandle, solve
from .uncertainty import (AmbiguitySet, ContingencyVector, ScenarioSet,
                          UncertaintyError, enumerate_support,
                          worst_case_distribution)


@dataclass
class SolveConfig:
    """Algorithm tolerances; eps2 is absolute in objective units."""

    eps1: float = 0.01
    eps2: float = 0.001
    eps3: float = 0.01
    n_max: int = 20
    n_o: int = 5
    outer_cap: int = 30
    workers: int = 1

    def __post_init__(self):
        if not (0.0 < self.eps1 < 1.0 and 0.0 < self.eps3 < 1.0):
            raise ValueError("eps1 and eps3 must lie in (0, 1)")
        if self.n_o < 1 or self.n_max < 1:
            raise ValueError("n_o and n_max must be >= 1")

    @staticmethod
    def from_run(cfg: RunConfig):
        return SolveConfig(cfg.eps1, cfg.eps2, cfg.eps3, cfg.n_max, cfg.n_o,
                           cfg.outer_cap, cfg.workers)


@dataclass
class TraceEntry:
    iteration: int
    phase: str
    q_lb: float
    q_ub: float
    omega_sizes: tuple
    dw_iters: tuple
    inner_iters: tuple
    wall: float


@dataclass
class SolveTrace:
    entries: list = field(default_factory=list)
    termination: str = ""
    ub_valid: bool = True

    def record(self, entry: TraceEntry, sink=None):
        self.entries.append(entry)
        if sink:
            sink(format_trace_line(entry))

    def lines(self):
        return [format_trace_line(e) for e in self.entries]


def format_trace_line(e: TraceEntry):
    om = ",".join(str(s) for s in e.omega_sizes)
    dw = ",".join(str(s) for s in e.dw_iters) or "-"
    inner = ",".join(str(s) for s in e.inner_iters) or "-"
    return (f"iter={e.iteration} phase={e.phase} q_lb={e.q_lb:.6f} "
            f"q_ub={e.q_ub if e.q_ub < INF else 'inf'} omega={om} "
            f"dw={dw} inner={inner} wall={e.wall:.2f}")


def rel_gap(ub, lb):
    if ub >= INF or lb <= -INF:
        return INF
    return (ub - lb) / max(abs(ub), 1e-9)


def initial_working_set(n, k_max, amb: AmbiguitySet):
    """All-ones plus every single failure: smallest standard support on which
    the moment set is nonempty (the all-ones vector alone leaves the dual
    unbounded whenever a failure-probability lower bound is positive)."""
    out = [ContingencyVector.all_on(n)]
    if k_max >= 1:
        out.extend(cv for cv in enumerate_support(n, 1) if cv.n_faults == 1)
    probe = {cv: 0.0 for cv in out}
    try:
        worst_case_distribution(probe, amb)
    except UncertaintyError as exc:
        raise UncertaintyError(
            "moment set infeasible on the all-ones + single-failure support; "
            "failure-probability lower bounds are too large for k_max") from exc
    return out


# -- pricing ---------------------------------------------------------------


@dataclass
class PricingSystem:
    """Third-stage block at fixed upstream decisions, in >= normal form with
    bounds folded into rows: cont rows U_c, binary columns U_b, contingency
    columns O, right-hand side t, and the continuous objective a."""

    cont: list
    bins: list
    rows: list          # (cont_coeffs, bin_coeffs, o_coeffs, rhs)
    a: dict
    n: int
    k_max: int
    cont_bounds: dict


def build_pricing(stage3p, upstream: dict, cfg: RunConfig) -> PricingSystem:
    blk = substitute(stage3p.block, upstream)
    M = cfg.bigm_physical
    cont, bins = [], []
    for d in blk.vars.values():
        (bins if d.kind == BINARY else cont).append(d.name)
    binset = set(bins)
    rows = []

    def push(coeffs, olin, rhs, tag):
        cc, bc = {}, {}
        for nme, c in coeffs.items():
            (bc if nme in binset else cc)[nme] = c
        rows.append((cc, bc, dict(olin), float(rhs)))

    for r in blk.rows:
        if r.sense != GE:
            raise SolverError(f"pricing expects >=-normalized rows, got {r.tag}")
        if not r.obil:
            push(r.coeffs, r.olin, r.rhs, r.tag)
            continue
        if len(r.obil) != 1 or r.olin:
            raise SolverError(f"row {r.tag} mixes several contingency products")
        j, partner, c = r.obil[0]
        # exact two-case split (each such row involves one o entry)
        on = dict(r.coeffs)
        on[partner] = on.get(partner, 0.0) + c
        push(on, {j: -M}, r.rhs - M, r.tag + ":on")
        push(r.coeffs, {j: M}, r.rhs, r.tag + ":off")
    for nme in cont:
        d = blk.vars[nme]
        if d.lb > -INF:
            push({nme: 1.0}, {}, d.lb, f"lb:{nme}")
        if d.ub < INF:
            push({nme: -1.0}, {}, -d.ub, f"ub:{nme}")
    a = {nme: c for nme, c in blk.obj.items()}
    if any(nme in binset for nme in a):
        raise SolverError("third-stage objective must touch continuous variables only")
    n = 1 + max((j for _, _, oc, _ in rows for j in oc), default=-1)
    return PricingSystem(cont, bins, rows, a, n, cfg.k_max, {})


def q3_solve(ps: PricingSystem, cv: ContingencyVector, handle) -> tuple:
    """Evaluate the third-stage recourse at a fixed contingency; returns the
    optimal value and the binary column."""
    blk = LinearBlock()
    for nme in ps.cont:
        blk.declare(nme)
    for nme in ps.bins:
        blk.declare(nme, BINARY, 0.0, 1.0)
    o = cv.as_array()
    for cc, bc, oc, rhs in ps.rows:
        r = dict(cc)
        r.update({n: r.get(n, 0.0) + c for n, c in bc.items()})
        rr = rhs - sum(c * o[j] for j, c in oc.items())
        blk.add_row(r, GE, rr)
    for nme, c in ps.a.items():
        blk.add_obj(nme, c)
    sol = solve(blk, kind="milp", handle=handle).require_optimal("q3")
    y = tuple(int(round(sol.values[nme])) for nme in ps.bins)
    return sol.objective, y, sol.values


@dataclass
class PriceResult:
    o_star: ContingencyVector
    value: float            # inner upper bound on the pricing objective
    lower: float
    iters: int
    ub_valid: bool = True


def price_contingency(ps: PricingSystem, lam, lam_const, n, k_max,
                      scfg: SolveConfig, handle, q3cache=None,
                      bigm_dual=1e8) -> PriceResult:
    """Inner CCG on the pricing problem over the whole support.

    The master keeps one dual-price vector per enumerated binary column with
    Big-M products tying prices to the contingency choice; columns come from
    exact recourse evaluations at the incumbent contingency.
    """
    lam = np.asarray(lam, dtype=float)
    w = lam[:n] - lam[n:]          # effective per-component epigraph price
    theta: list[tuple] = []
    a_lb, a_ub = -INF, INF
    o_best = None
    q3cache = q3cache if q3cache is not None else {}
    k = 0
    while True:
        o_k, master_val = _pricing_master(ps, theta, w, lam_const, n, k_max,
                                          handle, bigm_dual)
        if theta:
            a_ub = master_val
        if rel_gap(a_ub, a_lb) <= scfg.eps2:
            o_best = o_k
            break
        key = o_k.o
        if key in q3cache:
            q3v = q3cache[key][0]
            y = q3cache[key][1]
        else:
            q3v, y, vals = q3_solve(ps, o_k, handle)
            q3cache[key] = (q3v, y, vals)
        cand = q3v - (float(w @ (1.0 - o_k.as_array())) + lam_const)
        a_lb = max(a_lb, cand)
        o_best = o_k
        k += 1
        if y in theta:
            break               # repeated column cannot improve the master
        theta.append(y)
        if rel_gap(a_ub, a_lb) <= scfg.eps3:
            break
        if k > scfg.n_max + 5:
            break               # safety net beyond the DW-level cap
    return PriceResult(o_best, a_ub if a_ub < INF else a_lb, a_lb, k)


def _pricing_master(ps, theta, w, lam_const, n, k_max, handle, bigm_dual):
    blk = LinearBlock()
    ovars = [blk.declare(f"o.{j}", BINARY, 0.0, 1.0) for j in range(n)]
    blk.add_row({nme: 1.0 for nme in ovars}, GE, float(n - k_max), tag="support")
    varpi = blk.declare("varpi")
    if not theta:
        blk.add_row({varpi: 1.0}, EQ, 0.0, tag="seed")
    Md = bigm_dual
    bin_index = {nme: i for i, nme in enumerate(ps.bins)}
    for t, y in enumerate(theta):
        yv = np.array(y, dtype=float)
        pis = [blk.declare(f"pi.{t}.{i}", CONTINUOUS, 0.0) for i in range(len(ps.rows))]
        stat = {}
        epi = {varpi: 1.0}
        for i, (cc, bc, oc, rhs) in enumerate(ps.rows):
            coef = rhs - sum(c * yv[bin_index[nme]] for nme, c in bc.items())
            if coef:
                epi[pis[i]] = epi.get(pis[i], 0.0) - coef
            for nme, c in cc.items():
                stat.setdefault(nme, {})[pis[i]] = c
            for j, c in oc.items():
                pv = blk.declare(f"prod.{t}.{i}.{j}", CONTINUOUS)
                # prod ~ o_j * pi_i within dual Big-M
                blk.add_row({pv: 1.0, ovars[j]: -Md}, LE, 0.0, tag=f"pr:a:{t}.{i}.{j}")
                blk.add_row({pv: 1.0, ovars[j]: Md}, GE, 0.0, tag=f"pr:b:{t}.{i}.{j}")
                blk.add_row({pv: 1.0, pis[i]: -1.0, ovars[j]: Md}, LE, Md,
                            tag=f"pr:c:{t}.{i}.{j}")
                blk.add_row({pv: 1.0, pis[i]: -1.0, ovars[j]: -Md}, GE, -Md,
                            tag=f"pr:d:{t}.{i}.{j}")
                epi[pv] = epi.get(pv, 0.0) + c
        for nme, coeffs in stat.items():
            blk.add_row(coeffs, EQ, ps.a.get(nme, 0.0), tag=f"stat:{t}:{nme}")
        blk.add_row(epi, LE, 0.0, tag=f"epi:{t}")
    # maximize varpi + w'o - (sum(w) + lam'): minimize the negation
    blk.add_obj(varpi, -1.0)
    for j in range(n):
        if w[j]:
            blk.add_obj(ovars[j], -float(w[j]))
    blk.obj_const = float(w.sum()) + float(lam_const)
    sol = solve(blk, kind="milp", handle=handle)
    if sol.status == "unbounded":
        raise SolverError("pricing master unbounded: dual Big-M too small")
    sol.require_optimal("pricing master")
    o = ContingencyVector(tuple(int(round(sol.values[nme])) for nme in ovars))
    return o, -sol.objective


# -- Dantzig-Wolfe procedure -------------------------------------------------


@dataclass
class DWResult:
    eps_id: int
    omega_solved: list       # working set used by the last restricted solve
    contributions: dict      # ContingencyVector -> value * probability
    q3_restricted: float
    a_value: float
    lam: np.ndarray
    lam_const: float
    dw_iters: int
    inner_iters: int
    hit_cap: bool


def dw_procedure(ps: PricingSystem, omega_start, amb: AmbiguitySet,
                 scfg: SolveConfig, handle, eps_id=0,
                 bigm_dual=1e8) -> DWResult:
    n = amb.n
    omega = list(omega_start)
    q3cache: dict = {}
    j = 0
    inner_total = 0
    hit_cap = False
    while True:
        vals = {}
        for cv in omega:
            if cv.o not in q3cache:
                q3cache[cv.o] = q3_solve(ps, cv, handle)
            vals[cv] = q3cache[cv.o][0]
        dist, q3exp, (lam, lam_const) = worst_case_distribution(vals, amb)
        res = price_contingency(ps, lam, lam_const, n, ps.k_max, scfg, handle,
                                q3cache, bigm_dual)
        inner_total += res.iters
        j += 1
        omega_solved = list(omega)
        contributions = {cv: vals[cv] * dist.get(cv, 0.0) for cv in omega}
        if res.o_star.o in {cv.o for cv in omega}:
            break
        if res.value <= scfg.eps2:
            break
        omega.append(res.o_star)
        if j > scfg.n_max:
            hit_cap = res.value > scfg.eps2
            break
    return DWResult(eps_id, omega_solved, contributions, q3exp, res.value,
                    lam, lam_const, j, inner_total, hit_cap)


# -- outer loop ---------------------------------------------------------------


class MasterInfeasible(SolverError):
    pass


def upstream_values(stage3p, master_values, eps_id):
    out = {}
    for nme in stage3p.block.vars:
        st = stage_of(nme)
        if st == 1:
            out[nme] = master_values[nme]
        elif st == 2:
            out[nme] = master_values[f"{nme}@e{eps_id}"]
    return out


def run(case, scen: ScenarioSet, amb: AmbiguitySet, cfg: RunConfig,
        progress=None, templates=None):
    """Full solve; returns (result dict, SolveTrace)."""
    t_start = time.time()
    scfg = SolveConfig.from_run(cfg)
    handle = SolverHandle(mip_gap=cfg.mip_gap, time_limit=cfg.time_limit)
    if templates is None:
        inc, s1, s2p, s3p = build_tractable(case, cfg)
    else:
        inc, s1, s2p, s3p = templates
    n = case.n_components
    omega0 = initial_working_set(n, cfg.k_max, amb)
    omega = {e: list(omega0) for e in range(len(scen))}
    trace = SolveTrace()
    q_lb, q_ub = -INF, INF
    best = None
    termination = "iteration-cap"
    for it in range(scfg.outer_cap + 1):
        t0 = time.time()
        dual_blocks = [dualize_dro(s2p, s3p, amb, omega[e], scen.eps[e], e)
                       for e in range(len(scen))]
        master = assemble_extensive(s1, dual_blocks, scen.prob)
        sol = solve(master, kind="milp", handle=handle)
        if sol.status == "infeasible":
            raise MasterInfeasible(
                f"master infeasible at outer iteration {it}: first-stage "
                "constraints admit no topology/dispatch")
        sol.require_optimal("master")
        bound = sol.bound if sol.bound is not None else sol.objective
        q_lb = max(q_lb, bound)
        best = (sol, dual_blocks)
        trace.record(TraceEntry(it, "master", q_lb, q_ub,
                                tuple(len(omega[e]) for e in range(len(scen))),
                                (), (), time.time() - t0), progress)
        if rel_gap(q_ub, q_lb) <= scfg.eps1:
            termination = "converged"
            break
        if it >= scfg.outer_cap:
            termination = "iteration-cap"
            break
        t0 = time.time()
        results = _run_dw_phase(s3p, sol.values, scen, omega, amb, scfg, cfg,
                                handle)
        c1 = sum(c * sol.values[k] for k, c in s1.block.obj.items())
        ub = c1
        for e, res in enumerate(results):
            c2 = sum(c * sol.values.get(k, 0.0) for k, c in dual_blocks[e].c2.items())
            ub += scen.prob[e] * (c2 + res.q3_restricted + res.a_value)
            if res.hit_cap:
                trace.ub_valid = False
            newcomers = [cv for cv in res.omega_solved
                         if cv.o not in {x.o for x in omega[e]}]
            newcomers.sort(key=lambda cv: (-res.contributions.get(cv, 0.0), cv.o))
            omega[e] = omega[e] + newcomers[:scfg.n_o]
        q_ub = ub
        trace.record(TraceEntry(it, "dw", q_lb, q_ub,
                                tuple(len(omega[e]) for e in range(len(scen))),
                                tuple(r.dw_iters for r in results),
                                tuple(r.inner_iters for r in results),
                                time.time() - t0), progress)
        if rel_gap(q_ub, q_lb) <= scfg.eps1:
            termination = "converged"
            break
    trace.termination = termination
    sol, dual_blocks = best
    result = {
        "q1": q_lb if termination == "converged" else sol.objective,
        "q_lb": q_lb,
        "q_ub": q_ub,
        "gap": rel_gap(q_ub, q_lb),
        "values": sol.values,
        "z": {br.id: sol.values[f"z.s1.{br.id}"] for br in case.branches},
        "objective_stage1": sum(c * sol.values[k] for k, c in s1.block.obj.items()),
        "omega": omega,
        "wall": time.time() - t_start,
        "termination": termination,
    }
    return result, trace


def _run_dw_phase(s3p, master_values, scen, omega, amb, scfg, cfg, handle):
    tasks = []
    for e in range(len(scen)):
        ups = upstream_values(s3p, master_values, e)
        tasks.append((e, ups))
    if scfg.workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=scfg.workers) as pool:
            futs = [pool.submit(_dw_task, s3p, ups, omega[e], amb, scfg, cfg,
                                handle, e) for e, ups in tasks]
            results = [f.result() for f in futs]
    else:
        results = [_dw_task(s3p, ups, omega[e], amb, scfg, cfg, handle, e)
                   for e, ups in tasks]
    return sorted(results, key=lambda r: r.eps_id)


def _dw_task(s3p, ups, omega_e, amb, scfg, cfg, handle, eps_id):
    ps = build_pricing(s3p, ups, cfg)
    return dw_procedure(ps, omega_e, amb, scfg, handle, eps_id, cfg.bigm_dual)
