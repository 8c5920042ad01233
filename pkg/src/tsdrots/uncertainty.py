"""Contingency support, moment ambiguity set, and forecast-error scenarios.

The contingency vector o has one entry per component in the fixed order
conventional generators, branches, VRE generators; 1 means in service.  The
ambiguity set bounds the expected failure indicators E[1 - o] between given
per-component probability intervals.  Forecast-error scenarios are sampled
from truncated normals and reduced by fast-forward selection.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .blocks import EQ, GE, LE, LinearBlock
from .network import GridCase
from .solver import SolverHandle, solve


class UncertaintyError(ValueError):
    pass


@dataclass(frozen=True)
class ContingencyVector:
    o: tuple

    def __post_init__(self):
        if any(v not in (0, 1) for v in self.o):
            raise UncertaintyError("contingency entries must be 0/1")

    @property
    def n_faults(self):
        return len(self.o) - sum(self.o)

    def as_array(self):
        return np.array(self.o, dtype=float)

    @staticmethod
    def all_on(n):
        return ContingencyVector((1,) * n)


def enumerate_support(n, k_max, cap=100000, active=None):
    """All status vectors with at most k_max failures, ordered by fault count
    then lexicographically.  ``active`` optionally restricts which components
    may fail."""
    idx = list(range(n)) if active is None else sorted(active)
    total = sum(math.comb(len(idx), k) for k in range(min(k_max, len(idx)) + 1))
    if total > cap:
        raise UncertaintyError(
            f"support size {total} exceeds cap {cap}; use implicit pricing")
    out = []
    for k in range(min(k_max, len(idx)) + 1):
        for fail in itertools.combinations(idx, k):
            o = [1] * n
            for i in fail:
                o[i] = 0
            out.append(ContingencyVector(tuple(o)))
    return out


@dataclass(frozen=True)
class AmbiguitySet:
    o_min: tuple
    o_max: tuple

    def __post_init__(self):
        lo, hi = np.asarray(self.o_min), np.asarray(self.o_max)
        if lo.shape != hi.shape:
            raise UncertaintyError("bound vectors must have equal length")
        if np.any(lo < 0) or np.any(hi > 1) or np.any(lo > hi):
            raise UncertaintyError("need 0 <= o_min <= o_max <= 1 entrywise")

    @property
    def n(self):
        return len(self.o_min)

    def o_tilde(self):
        """Stacked bound vector matching T = [I; -I]."""
        return np.concatenate([np.asarray(self.o_max), -np.asarray(self.o_min)])

    def dual_term(self, o: ContingencyVector):
        """Coefficients of the dual multipliers in lambda' + lambda'T(1-o)."""
        fail = 1.0 - o.as_array()
        return np.concatenate([fail, -fail])


def restrict_ambiguity(amb: AmbiguitySet, active) -> AmbiguitySet:
    """Ambiguity set consistent with a support restricted to failures of the
    given components: failure-probability lower bounds outside the active set
    drop to zero (those components never fail on the restricted support)."""
    act = set(active)
    lo = tuple(v if i in act else 0.0 for i, v in enumerate(amb.o_min))
    return AmbiguitySet(lo, amb.o_max)


def default_ambiguity(case: GridCase, cfg) -> AmbiguitySet:
    lo, hi = [], []
    for _ in case.conv:
        lo.append(cfg.fail_gen[0]), hi.append(cfg.fail_gen[1])
    for br in case.branches:
        cls = cfg.fail_trafo if br.must_on else cfg.fail_line
        lo.append(cls[0]), hi.append(cls[1])
    for _ in case.vre:
        lo.append(cfg.fail_gen[0]), hi.append(cfg.fail_gen[1])
    return AmbiguitySet(tuple(lo), tuple(hi))


def moment_lp(values: dict, amb: AmbiguitySet, maximize=True):
    """LP over distributions on the given support with bounded failure moments."""
    support = list(values)
    block = LinearBlock()
    names = []
    for i, cv in enumerate(support):
        nme = block.declare(f"p.{i}", lb=0.0, ub=1.0)
        names.append(nme)
        block.add_obj(nme, -values[cv] if maximize else values[cv])
    block.add_row({n: 1.0 for n in names}, EQ, 1.0, tag="moment:norm")
    n = amb.n
    for comp in range(n):
        coeffs = {names[i]: 1.0 - support[i].o[comp] for i in range(len(support))}
        coeffs = {k: v for k, v in coeffs.items() if v}
        block.add_row(dict(coeffs), LE, amb.o_max[comp], tag=f"moment:hi:{comp}")
        block.add_row(coeffs, GE, amb.o_min[comp], tag=f"moment:lo:{comp}")
    return block, names, support


def worst_case_distribution(values: dict, amb: AmbiguitySet):
    """Maximizing distribution of the expected value over the ambiguity set.

    Returns (distribution over ContingencyVector, expectation, duals) where
    duals = (lambda in R^{2n}_{>=0}, lambda') prices the moment rows and the
    normalization row; the oracle the dual formulation is checked against.
    """
    block, names, support = moment_lp(values, amb)
    sol = solve(block, kind="lp")
    if not sol.optimal:
        raise UncertaintyError(f"moment set infeasible over given support ({sol.status})")
    dist = {support[i]: sol.values[names[i]] for i in range(len(support))}
    lam_hi = np.zeros(amb.n)
    lam_lo = np.zeros(amb.n)
    lam_norm = 0.0
    for row, dual in zip(block.rows, sol.duals):
        kind, _, comp = (row.tag.split(":") + ["0"])[:3]
        if row.tag == "moment:norm":
            lam_norm = -dual
        elif row.tag.startswith("moment:hi"):
            lam_hi[int(comp)] = -dual
        elif row.tag.startswith("moment:lo"):
            lam_lo[int(comp)] = dual
    lam = np.concatenate([np.maximum(lam_hi, 0.0), np.maximum(lam_lo, 0.0)])
    return dist, -sol.objective, (lam, lam_norm)


def feasible_distribution(moments, support, amb: AmbiguitySet, seed=0):
    """Any distribution on the support with E[1-o] equal to given moments."""
    block = LinearBlock()
    names = [block.declare(f"p.{i}", lb=0.0, ub=1.0) for i in range(len(support))]
    block.add_row({n: 1.0 for n in names}, EQ, 1.0, tag="norm")
    for comp in range(amb.n):
        coeffs = {names[i]: 1.0 - support[i].o[comp] for i in range(len(support))}
        coeffs = {k: v for k, v in coeffs.items() if v}
        block.add_row(coeffs, EQ, float(moments[comp]), tag=f"m:{comp}")
    rng = np.random.default_rng(seed)
    for n in names:                    # random objective picks a vertex
        block.add_obj(n, float(rng.uniform(0, 1)))
    sol = solve(block, kind="lp")
    if not sol.optimal:
        return None
    return {support[i]: sol.values[names[i]] for i in range(len(support))}


@dataclass
class ScenarioSet:
    eps: np.ndarray          # (count, n_vre)
    prob: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.eps = np.atleast_2d(np.asarray(self.eps, dtype=float))
        self.prob = np.asarray(self.prob, dtype=float)
        if len(self.prob) != len(self.eps):
            raise UncertaintyError("probability/scenario count mismatch")
        if np.any(self.prob < -1e-12) or abs(self.prob.sum() - 1.0) > 1e-9:
            raise UncertaintyError("probabilities must be a distribution")

    def __len__(self):
        return len(self.prob)


def generate_scenarios(case: GridCase, count, sigma_frac=0.15, seed=0) -> ScenarioSet:
    """Truncated zero-mean normal forecast errors, one column per VRE unit.

    Standard deviation is sigma_frac times the forecast; truncation keeps
    the realized availability inside [0, s_max].
    """
    if count < 1:
        raise UncertaintyError("count must be >= 1")
    rng = np.random.default_rng(seed)
    cols = []
    for g in case.vre:
        sd = sigma_frac * g.p_fc
        lo, hi = -g.p_fc, g.s_max - g.p_fc
        if sd <= 0.0:
            cols.append(np.zeros(count))
            continue
        a, b = lo / sd, hi / sd
        cols.append(stats.truncnorm.rvs(a, b, scale=sd, size=count, random_state=rng))
    eps = np.column_stack(cols) if cols else np.zeros((count, 0))
    return ScenarioSet(eps, np.full(count, 1.0 / count), seed=seed,
                       meta={"sigma_frac": sigma_frac, "count": count})


def reduce_scenarios(scen: ScenarioSet, keep) -> ScenarioSet:
    """Fast-forward selection; dropped mass moves to the nearest kept scenario."""
    n = len(scen)
    if keep > n:
        raise UncertaintyError("keep exceeds scenario count")
    if keep == n:
        return scen
    d = np.linalg.norm(scen.eps[:, None, :] - scen.eps[None, :, :], axis=2)
    kept: list[int] = []
    # cost of candidate u = sum_j p_j * min distance from j to kept+{u}
    best = d.copy()
    for _ in range(keep):
        if kept:
            cur = np.minimum.reduce([d[:, i] for i in kept])
        else:
            cur = np.full(n, np.inf)
        costs = []
        for u in range(n):
            if u in kept:
                costs.append(np.inf)
                continue
            costs.append(float(scen.prob @ np.minimum(cur, d[:, u])))
        kept.append(int(np.argmin(costs)))
    kept.sort()
    prob = np.zeros(len(kept))
    dist_to_kept = d[:, kept]
    owner = np.argmin(dist_to_kept, axis=1)
    for j in range(n):
        prob[owner[j]] += scen.prob[j]
    return ScenarioSet(scen.eps[kept], prob, seed=scen.seed,
                       meta=dict(scen.meta, reduced_from=n))


# -- scenario file ----------------------------------------------------------

def write_scenarios(scen: ScenarioSet, path):
    lines = ["# tsdrots scenarios"]
    meta = dict(scen.meta)
    meta["seed"] = scen.seed
    lines.append("# " + " ".join(f"{k}={v}" for k, v in sorted(meta.items())))
    lines.append("# columns: id probability eps...")
    for i in range(len(scen)):
        eps = " ".join(repr(float(x)) for x in scen.eps[i])
        lines.append(f"{i} {float(scen.prob[i])!r} {eps}".rstrip())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_scenarios(path) -> ScenarioSet:
    eps, prob, meta = [], [], {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if line.startswith("#"):
                for part in line[1:].split():
                    if "=" in part:
                        k, v = part.split("=", 1)
                        meta[k] = v
                continue
            if not line:
                continue
            toks = line.split()
            prob.append(float(toks[1]))
            eps.append([float(t) for t in toks[2:]])
    seed = meta.pop("seed", None)
    seed = None if seed in (None, "None") else int(seed)
    return ScenarioSet(np.array(eps), np.array(prob), seed=seed, meta=meta)
