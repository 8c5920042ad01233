"""One LP/MILP interface for every module, backed by HiGHS through scipy.

Dual values are part of the contract for pure LPs (the pricing dualization
and the moment-LP oracle both need them); they are reported per row with the
convention dual[i] = d(objective)/d(rhs_i).  MILP duals are never requested.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .blocks import BINARY, EQ, GE, INF, LE, LinearBlock


class SolverError(RuntimeError):
    pass


@dataclass
class SolverHandle:
    """Backend id plus tolerance settings shared by all solves.

    mip_gap defaults to 0.5% and the integrality tolerance is the tightest
    the backend supports (HiGHS does not expose it through scipy).
    """

    backend: str = "highs"
    mip_gap: float = 0.005
    time_limit: float | None = None
    presolve: bool = True

    def __post_init__(self):
        if self.backend != "highs":
            raise SolverError(f"unknown backend {self.backend!r}")


@dataclass
class Solution:
    status: str                      # optimal | infeasible | unbounded | time-limit
    objective: float | None = None
    values: dict = field(default_factory=dict)
    duals: list | None = None        # per-row d(obj)/d(rhs), LP only
    bound: float | None = None       # MILP dual bound

    @property
    def optimal(self):
        return self.status == "optimal"

    def require_optimal(self, what=""):
        if not self.optimal:
            raise SolverError(f"solve {what!r} ended with status {self.status}")
        return self


def _arrays(block: LinearBlock):
    names = list(block.vars)
    idx = {n: i for i, n in enumerate(names)}
    n = len(names)
    c = np.zeros(n)
    for k, v in block.obj.items():
        c[idx[k]] = v
    lb = np.array([block.vars[k].lb for k in names])
    ub = np.array([block.vars[k].ub for k in names])
    integrality = np.array([1 if block.vars[k].kind == BINARY else 0 for k in names])
    data, ri, ci, lo, hi = [], [], [], [], []
    for i, r in enumerate(block.rows):
        if r.olin or r.obil or r.eps:
            raise SolverError(f"row {r.tag!r} still carries symbolic o/eps terms")
        for nme, coeff in r.coeffs.items():
            ri.append(i)
            ci.append(idx[nme])
            data.append(coeff)
        if r.sense == LE:
            lo.append(-INF), hi.append(r.rhs)
        elif r.sense == GE:
            lo.append(r.rhs), hi.append(INF)
        else:
            lo.append(r.rhs), hi.append(r.rhs)
    a = sparse.csc_matrix((data, (ri, ci)), shape=(len(block.rows), n))
    return names, c, lb, ub, integrality, a, np.array(lo), np.array(hi)


_MILP_STATUS = {0: "optimal", 1: "time-limit", 2: "infeasible", 3: "unbounded"}
_LP_STATUS = {0: "optimal", 1: "time-limit", 2: "infeasible", 3: "unbounded"}


def solve(block: LinearBlock, kind="auto", handle: SolverHandle | None = None) -> Solution:
    handle = handle or SolverHandle()
    if kind == "auto":
        kind = "milp" if any(d.kind == BINARY for d in block.vars.values()) else "lp"
    names, c, lb, ub, integrality, a, lo, hi = _arrays(block)
    if kind == "lp":
        return _solve_lp(block, names, c, lb, ub, a, lo, hi, handle)
    return _solve_milp(block, names, c, lb, ub, integrality, a, lo, hi, handle)


def _solve_lp(block, names, c, lb, ub, a, lo, hi, handle):
    # Split the row-interval form into <= / == parts for linprog so that
    # marginals come back with a well-defined sign per original row.
    nrows = len(block.rows)
    aub_rows, aub_rhs, aub_map = [], [], []     # (row index, sign)
    aeq_rows, aeq_rhs, aeq_map = [], [], []
    acsr = a.tocsr()
    for i in range(nrows):
        row = acsr.getrow(i)
        if lo[i] == hi[i]:
            aeq_rows.append(row), aeq_rhs.append(lo[i]), aeq_map.append(i)
        elif hi[i] < INF:
            aub_rows.append(row), aub_rhs.append(hi[i]), aub_map.append((i, 1.0))
        else:
            aub_rows.append(-row), aub_rhs.append(-lo[i]), aub_map.append((i, -1.0))
    a_ub = sparse.vstack(aub_rows, format="csr") if aub_rows else None
    a_eq = sparse.vstack(aeq_rows, format="csr") if aeq_rows else None
    bounds = [(None if l == -INF else l, None if u == INF else u) for l, u in zip(lb, ub)]
    opts = {"presolve": handle.presolve}
    if handle.time_limit is not None:
        opts["time_limit"] = handle.time_limit
    res = linprog(c, A_ub=a_ub, b_ub=np.array(aub_rhs) if aub_rows else None,
                  A_eq=a_eq, b_eq=np.array(aeq_rhs) if aeq_rows else None,
                  bounds=bounds, method="highs", options=opts)
    status = _LP_STATUS.get(res.status, "error")
    if status == "error":
        raise SolverError(f"LP backend failure: {res.message}")
    if status != "optimal":
        return Solution(status)
    duals = [0.0] * nrows
    if aub_rows:
        for (i, sign), m in zip(aub_map, res.ineqlin.marginals):
            duals[i] = sign * float(m)
    if aeq_rows:
        for i, m in zip(aeq_map, res.eqlin.marginals):
            duals[i] = float(m)
    values = {n: float(v) for n, v in zip(names, res.x)}
    return Solution("optimal", float(res.fun) + block.obj_const, values, duals)


def _solve_milp(block, names, c, lb, ub, integrality, a, lo, hi, handle):
    constraints = LinearConstraint(a, lo, hi) if len(block.rows) else None
    opts = {"presolve": handle.presolve, "mip_rel_gap": handle.mip_gap}
    if handle.time_limit is not None:
        opts["time_limit"] = handle.time_limit
    res = milp(c=c, constraints=constraints, integrality=integrality,
               bounds=Bounds(lb, ub), options=opts)
    status = _MILP_STATUS.get(res.status, "error")
    if status == "error":
        raise SolverError(f"MILP backend failure: {res.message}")
    if res.x is None:
        return Solution(status)
    values = {}
    for j, (n, v) in enumerate(zip(names, res.x)):
        v = float(v)
        if integrality[j] and abs(v - round(v)) < 1e-6:
            v = float(round(v))
        values[n] = v
    bound = getattr(res, "mip_dual_bound", None)
    if bound is not None:
        bound = float(bound) + block.obj_const
    return Solution(status if status == "optimal" else "time-limit",
                    float(res.fun) + block.obj_const, values, None, bound)


def write_lp(block: LinearBlock, path):
    """Dump the model in LP text format for external debugging."""
    lines = ["Minimize", " obj: " + _expr(block.obj, block.obj_const), "Subject To"]
    for i, r in enumerate(block.rows):
        op = {LE: "<=", GE: ">=", EQ: "="}[r.sense]
        lines.append(f" r{i}_{r.tag.replace(' ', '_').replace(':', '.')}: "
                     f"{_expr(r.coeffs)} {op} {r.rhs!r}")
    lines.append("Bounds")
    for d in block.vars.values():
        lo = "-inf" if d.lb == -INF else repr(d.lb)
        hi = "+inf" if d.ub == INF else repr(d.ub)
        lines.append(f" {lo} <= {d.name} <= {hi}")
    bins = block.binaries()
    if bins:
        lines.append("Binary")
        lines.extend(" " + n for n in bins)
    lines.append("End")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _expr(coeffs, const=0.0):
    parts = []
    for n, v in coeffs.items():
        parts.append(f"{'+' if v >= 0 else '-'} {abs(v)!r} {n}")
    if const:
        parts.append(f"{'+' if const >= 0 else '-'} {abs(const)!r}")
    return " ".join(parts) if parts else "0"
