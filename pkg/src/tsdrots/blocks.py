"""Named-variable linear model blocks shared by every constraint builder.

A LinearBlock collects variable declarations, linear rows and objective terms
over a flat string-named variable space.  Rows may additionally carry

* an affine right-hand-side dependence on the forecast-error vector
  (``eps``: vre index -> coefficient added to the rhs), and
* a linear or bilinear left-hand-side dependence on the contingency vector
  (``olin``: component index -> lhs coefficient; ``obil``: terms
  coeff * o[j] * x[name]),

so one set of builders serves the deterministic form, the scenario-expanded
form, and the contingency pricing problem.  Blocks are immutable by
convention once handed to a consumer; all transformation helpers return new
blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

CONTINUOUS = "c"
BINARY = "b"

LE, GE, EQ = "<=", ">=", "=="

INF = float("inf")


class ModelError(ValueError):
    """Inconsistent model construction (redeclaration, unknown variable...)."""


@dataclass(frozen=True)
class VarDecl:
    name: str
    kind: str = CONTINUOUS
    lb: float = -INF
    ub: float = INF


@dataclass(frozen=True)
class Row:
    coeffs: dict
    sense: str
    rhs: float
    tag: str = ""
    family: str = ""
    eps: dict = field(default_factory=dict)
    olin: dict = field(default_factory=dict)
    obil: tuple = ()


class LinearBlock:
    def __init__(self):
        self.vars: dict[str, VarDecl] = {}
        self.rows: list[Row] = []
        self.obj: dict[str, float] = {}
        self.obj_const: float = 0.0

    # -- construction -----------------------------------------------------

    def declare(self, name, kind=CONTINUOUS, lb=-INF, ub=INF):
        """Declare a variable; a bare (unbounded continuous) declaration is
        compatible with a specific one in either order, anything else must
        match exactly."""
        old = self.vars.get(name)
        if old is None:
            self.vars[name] = VarDecl(name, kind, lb, ub)
            return name
        if (old.kind, old.lb, old.ub) == (kind, lb, ub):
            return name
        if (kind, lb, ub) == (CONTINUOUS, -INF, INF):
            return name
        if (old.kind, old.lb, old.ub) == (CONTINUOUS, -INF, INF):
            self.vars[name] = VarDecl(name, kind, lb, ub)
            return name
        raise ModelError(f"conflicting redeclaration of variable {name}")

    def add_row(self, coeffs, sense, rhs, tag="", family="", eps=None, olin=None, obil=()):
        coeffs = {k: float(v) for k, v in coeffs.items() if v != 0.0}
        self.rows.append(Row(coeffs, sense, float(rhs), tag, family,
                             dict(eps or {}), dict(olin or {}), tuple(obil)))

    def add_obj(self, name, coeff):
        if coeff:
            self.obj[name] = self.obj.get(name, 0.0) + float(coeff)

    def merge(self, other: "LinearBlock"):
        for d in other.vars.values():
            self.declare(d.name, d.kind, d.lb, d.ub)
        self.rows.extend(other.rows)
        for k, v in other.obj.items():
            self.add_obj(k, v)
        self.obj_const += other.obj_const
        return self

    # -- queries ----------------------------------------------------------

    def binaries(self):
        return [d.name for d in self.vars.values() if d.kind == BINARY]

    def check(self):
        """Every referenced name must be declared (o-indices are external)."""
        for r in self.rows:
            for n in r.coeffs:
                if n not in self.vars:
                    raise ModelError(f"row {r.tag!r} references undeclared variable {n}")
            for _, n, _ in r.obil:
                if n not in self.vars:
                    raise ModelError(f"row {r.tag!r} bilinear term references undeclared {n}")
        for n in self.obj:
            if n not in self.vars:
                raise ModelError(f"objective references undeclared variable {n}")
        return self


# -- transformations ------------------------------------------------------


def clone(block: LinearBlock, rename) -> LinearBlock:
    """Copy a block applying ``rename`` to every variable name."""
    out = LinearBlock()
    for d in block.vars.values():
        out.declare(rename(d.name), d.kind, d.lb, d.ub)
    for r in block.rows:
        out.rows.append(Row({rename(n): c for n, c in r.coeffs.items()},
                            r.sense, r.rhs, r.tag, r.family, dict(r.eps),
                            dict(r.olin),
                            tuple((j, rename(n), c) for j, n, c in r.obil)))
    for n, c in block.obj.items():
        out.add_obj(rename(n), c)
    out.obj_const = block.obj_const
    return out


def substitute(block: LinearBlock, values: dict) -> LinearBlock:
    """Fix variables to numeric values, moving their terms to the rhs."""
    out = LinearBlock()
    for d in block.vars.values():
        if d.name not in values:
            out.declare(d.name, d.kind, d.lb, d.ub)
    for r in block.rows:
        coeffs, rhs = {}, r.rhs
        for n, c in r.coeffs.items():
            if n in values:
                rhs -= c * values[n]
            else:
                coeffs[n] = c
        olin = dict(r.olin)
        obil = []
        for j, n, c in r.obil:
            if n in values:
                olin[j] = olin.get(j, 0.0) + c * values[n]
            else:
                obil.append((j, n, c))
        out.rows.append(Row(coeffs, r.sense, rhs, r.tag, r.family, dict(r.eps),
                            olin, tuple(obil)))
    for n, c in block.obj.items():
        if n in values:
            out.obj_const += c * values[n]
        else:
            out.add_obj(n, c)
    out.obj_const += block.obj_const
    return out


def stamp(block: LinearBlock, o=None, eps=None) -> LinearBlock:
    """Evaluate the o- and eps-dependence of rows at fixed numeric vectors."""
    out = LinearBlock()
    out.vars = dict(block.vars)
    out.obj = dict(block.obj)
    out.obj_const = block.obj_const
    for r in block.rows:
        coeffs, rhs = dict(r.coeffs), r.rhs
        rowolin, rowobil = r.olin, r.obil
        if eps is not None and r.eps:
            for j, c in r.eps.items():
                rhs += c * eps[j]
        if o is not None:
            for j, c in rowolin.items():
                rhs -= c * o[j]
            for j, n, c in rowobil:
                v = c * o[j]
                if v:
                    coeffs[n] = coeffs.get(n, 0.0) + v
            rowolin, rowobil = {}, ()
        out.rows.append(Row({k: v for k, v in coeffs.items() if v != 0.0},
                            r.sense, rhs, r.tag, r.family,
                            {} if eps is not None else dict(r.eps),
                            dict(rowolin), tuple(rowobil)))
    return out


def negated(r: Row) -> Row:
    return Row({n: -c for n, c in r.coeffs.items()}, GE if r.sense == LE else LE,
               -r.rhs, r.tag, r.family, {j: -c for j, c in r.eps.items()},
               {j: -c for j, c in r.olin.items()},
               tuple((j, n, -c) for j, n, c in r.obil))


def to_ge(rows) -> list[Row]:
    """Normalize rows to >= form; equalities become a pair of >= rows."""
    out = []
    for r in rows:
        if r.sense == GE:
            out.append(r)
        elif r.sense == LE:
            out.append(negated(r))
        else:
            out.append(replace(r, sense=GE))
            out.append(negated(replace(r, sense=LE)))
    return out
