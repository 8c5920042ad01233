"""Grid data model, case-file ingestion/validation and incidence matrices.

The case format is a self-describing UTF-8 text file with one table per
section.  Quantities are per-unit on the system MVA base declared in
[params]; costs are $ per per-unit quantity and durations are hours.

    [params]
    base_mva 100.0
    dt2 0.25          # corrective-control duration, stage 2 (h)
    dt3 0.25          # corrective-control duration, stage 3 (h)

    [bus]     id v_min v_max g_sh b_sh
    [branch]  id from to g b g_ch b_ch s_max theta_max w_switch ots corr must_on
    [gen_conv] id bus p_min p_max q_min q_max ramp_up ramp_dn w_up w_dn pw_p pw_cost
    [gen_vre] id bus s_max pf_min p_fc ramp_up ramp_dn w_up w_dn
    [load]    id bus p q w_shed shed_max

Each section starts with a header line naming its columns (order free);
records are whitespace-separated, `pw_p`/`pw_cost` are comma-joined floats.
Branch orientation is fixed: the from-bus gets +1 in the oriented incidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np


class CaseError(ValueError):
    """Malformed case file or violated data invariant."""


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float = 0.9
    v_max: float = 1.1
    g_sh: float = 0.0
    b_sh: float = 0.0


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    g: float
    b: float
    g_ch: float = 0.0
    b_ch: float = 0.0
    s_max: float = 2.0
    theta_max: float = 0.6
    w_switch: float = 1.0
    ots: bool = True          # participates in first-stage switching
    corr: bool = True         # participates in corrective switching
    must_on: bool = False

    def sym_key(self):
        u, v = sorted((self.from_bus, self.to_bus))
        return (u, v, self.g, self.b, self.g_ch, self.b_ch, self.s_max,
                self.theta_max, self.w_switch, self.ots, self.corr, self.must_on)


@dataclass(frozen=True)
class ConvGen:
    id: int
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    ramp_up: float
    ramp_dn: float
    w_up: float
    w_dn: float
    pw_p: tuple
    pw_cost: tuple


@dataclass(frozen=True)
class VreGen:
    id: int
    bus: int
    s_max: float
    pf_min: float
    p_fc: float              # first-stage forecast of the max active output
    ramp_up: float
    ramp_dn: float
    w_up: float
    w_dn: float


@dataclass(frozen=True)
class Load:
    id: int
    bus: int
    p: float
    q: float
    w_shed: float
    shed_max: float


@dataclass
class GridCase:
    buses: list = field(default_factory=list)
    branches: list = field(default_factory=list)
    conv: list = field(default_factory=list)
    vre: list = field(default_factory=list)
    loads: list = field(default_factory=list)
    base_mva: float = 100.0
    dt2: float = 0.25
    dt3: float = 0.25

    def bus_index(self):
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def n_components(self):
        return len(self.conv) + len(self.branches) + len(self.vre)

    def component_labels(self):
        return (["conv:%d" % g.id for g in self.conv]
                + ["branch:%d" % b.id for b in self.branches]
                + ["vre:%d" % g.id for g in self.vre])

    def sym_groups(self):
        """Identical-line groups (bit-exact property comparison, spec order)."""
        groups = {}
        for i, br in enumerate(self.branches):
            groups.setdefault(br.sym_key(), []).append(i)
        return [g for g in groups.values() if len(g) > 1]

    def validate(self):
        if not self.buses:
            raise CaseError("case has no buses")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseError("duplicate bus ids")
        bix = set(ids)
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in bix:
                    raise CaseError(f"branch {br.id} references missing bus {end}")
            if br.from_bus == br.to_bus:
                raise CaseError(f"branch {br.id} is a self-loop")
            if br.s_max < 0 or br.theta_max <= 0 or br.w_switch < 0:
                raise CaseError(f"branch {br.id}: limits/costs must be nonnegative")
        for b in self.buses:
            if b.v_min > b.v_max:
                raise CaseError(f"bus {b.id}: empty voltage interval")
        for g in self.conv:
            if g.bus not in bix:
                raise CaseError(f"gen_conv {g.id} references missing bus {g.bus}")
            if g.p_min > g.p_max or g.q_min > g.q_max:
                raise CaseError(f"gen_conv {g.id}: empty output interval")
            if min(g.ramp_up, g.ramp_dn, g.w_up, g.w_dn) < 0:
                raise CaseError(f"gen_conv {g.id}: ramps/costs must be nonnegative")
            _check_pw(g)
        for g in self.vre:
            if g.bus not in bix:
                raise CaseError(f"gen_vre {g.id} references missing bus {g.bus}")
            if not (0.0 < g.pf_min <= 1.0):
                raise CaseError(f"gen_vre {g.id}: pf_min must lie in (0, 1]")
            if g.s_max < 0 or not (0.0 <= g.p_fc <= g.s_max):
                raise CaseError(f"gen_vre {g.id}: need 0 <= p_fc <= s_max")
            if min(g.ramp_up, g.ramp_dn, g.w_up, g.w_dn) < 0:
                raise CaseError(f"gen_vre {g.id}: ramps/costs must be nonnegative")
        for d in self.loads:
            if d.bus not in bix:
                raise CaseError(f"load {d.id} references missing bus {d.bus}")
            if d.w_shed < 0 or d.shed_max < 0:
                raise CaseError(f"load {d.id}: shed cost/cap must be nonnegative")
            if d.shed_max > d.p and d.p >= 0:
                raise CaseError(f"load {d.id}: shed_max exceeds load p")
        if self.dt2 < 0 or self.dt3 < 0 or self.base_mva <= 0:
            raise CaseError("params: durations nonnegative, base_mva positive")
        return self


def _check_pw(g: ConvGen):
    p, eta = g.pw_p, g.pw_cost
    if len(p) != len(eta) or len(p) < 2:
        raise CaseError(f"gen_conv {g.id}: need >= 2 matching cost sample points")
    if any(p[i + 1] <= p[i] for i in range(len(p) - 1)):
        raise CaseError(f"gen_conv {g.id}: cost sample points must strictly increase")
    slopes = [(eta[i + 1] - eta[i]) / (p[i + 1] - p[i]) for i in range(len(p) - 1)]
    if any(slopes[i + 1] < slopes[i] - 1e-12 for i in range(len(slopes) - 1)):
        raise CaseError(f"gen_conv {g.id}: cost sample points must be convex")
    if not (p[0] <= g.p_min <= g.p_max <= p[-1]):
        raise CaseError(f"gen_conv {g.id}: cost samples must cover [p_min, p_max]")


# -- case file parsing -----------------------------------------------------

_SECTIONS = {
    "bus": Bus, "branch": Branch, "gen_conv": ConvGen, "gen_vre": VreGen,
    "load": Load,
}
_COLMAP = {"branch": {"from": "from_bus", "to": "to_bus"}}
_TUPLE_COLS = {"pw_p", "pw_cost"}
_BOOL_COLS = {"ots", "corr", "must_on"}


def _parse_value(col, text):
    if col in _TUPLE_COLS:
        return tuple(float(x) for x in text.split(","))
    if col in _BOOL_COLS:
        return text not in ("0", "false", "no")
    if col in ("id", "bus") or col.endswith("_bus"):
        return int(text)
    return float(text)


def parse_case(text: str) -> GridCase:
    case = GridCase()
    section, header = None, None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section, header = line[1:-1], None
            if section not in _SECTIONS and section != "params":
                raise CaseError(f"line {lineno}: unknown section [{section}]")
            continue
        if section is None:
            raise CaseError(f"line {lineno}: data before any section header")
        if section == "params":
            try:
                key, val = line.split()
            except ValueError:
                raise CaseError(f"line {lineno}: params lines are `name value`") from None
            if key not in ("base_mva", "dt2", "dt3"):
                raise CaseError(f"line {lineno}: unknown parameter {key!r}")
            setattr(case, key, float(val))
            continue
        cls = _SECTIONS[section]
        names = {f.name for f in fields(cls)}
        colmap = _COLMAP.get(section, {})
        if header is None:
            header = [colmap.get(c, c) for c in line.split()]
            unknown = [c for c in header if c not in names]
            if unknown:
                raise CaseError(f"line {lineno}: unknown column(s) {unknown} in [{section}]")
            continue
        toks = line.split()
        if len(toks) != len(header):
            raise CaseError(f"line {lineno}: expected {len(header)} fields, got {len(toks)}")
        try:
            rec = cls(**{c: _parse_value(c, t) for c, t in zip(header, toks)})
        except (ValueError, TypeError) as exc:
            raise CaseError(f"line {lineno}: {exc}") from None
        getattr(case, {"bus": "buses", "branch": "branches", "gen_conv": "conv",
                       "gen_vre": "vre", "load": "loads"}[section]).append(rec)
    return case.validate()


def load_case(path) -> GridCase:
    with open(path, encoding="utf-8") as fh:
        return parse_case(fh.read())


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_case(case: GridCase) -> str:
    out = ["[params]"]
    for key in ("base_mva", "dt2", "dt3"):
        out.append(f"{key} {_fmt(getattr(case, key))}")
    for section, cls, items in (("bus", Bus, case.buses), ("branch", Branch, case.branches),
                                ("gen_conv", ConvGen, case.conv),
                                ("gen_vre", VreGen, case.vre), ("load", Load, case.loads)):
        out.append("")
        out.append(f"[{section}]")
        inv = {v: k for k, v in _COLMAP.get(section, {}).items()}
        cols = [f.name for f in fields(cls)]
        out.append(" ".join(inv.get(c, c) for c in cols))
        for rec in items:
            out.append(" ".join(_fmt(getattr(rec, c)) for c in cols))
    return "\n".join(out) + "\n"


def save_case(case: GridCase, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_case(case))


# -- incidence matrices ----------------------------------------------------


@dataclass(frozen=True)
class IncidenceSet:
    """All incidence structure used by the constraint builders.

    E is oriented (+1 at the from-bus); E = E_pos + E_neg and
    E_abs = E_pos - E_neg hold entrywise.
    """

    E: np.ndarray
    E_pos: np.ndarray
    E_neg: np.ndarray
    E_abs: np.ndarray
    E_c: np.ndarray
    E_v: np.ndarray
    E_d: np.ndarray
    on_branches: tuple       # branch indices forced closed at stage 1
    nc_branches: tuple       # branch indices excluded from corrective switching
    sym_groups: tuple        # tuple of tuples of branch indices


def build_incidence(case: GridCase) -> IncidenceSet:
    bix = case.bus_index()
    nv, ne = len(case.buses), len(case.branches)
    E = np.zeros((nv, ne))
    for k, br in enumerate(case.branches):
        E[bix[br.from_bus], k] = 1.0
        E[bix[br.to_bus], k] = -1.0
    E_pos = np.where(E > 0, E, 0.0)
    E_neg = np.where(E < 0, E, 0.0)

    def device_inc(devs):
        m = np.zeros((nv, len(devs)))
        for j, dev in enumerate(devs):
            m[bix[dev.bus], j] = 1.0
        return m

    on = tuple(k for k, br in enumerate(case.branches) if br.must_on or not br.ots)
    nc = tuple(k for k, br in enumerate(case.branches) if not br.corr)
    groups = tuple(tuple(g) for g in case.sym_groups())
    return IncidenceSet(E, E_pos, E_neg, E_pos - E_neg, device_inc(case.conv),
                        device_inc(case.vre), device_inc(case.loads), on, nc, groups)


def connected_components(edges, n_nodes, status=None):
    """Component count/labels of the subgraph of closed edges (union-find)."""
    parent = list(range(n_nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for k, (u, v) in enumerate(edges):
        if status is None or status[k]:
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[ru] = rv
    roots = {find(i) for i in range(n_nodes)}
    return len(roots)


def case_edges(case: GridCase):
    bix = case.bus_index()
    return [(bix[b.from_bus], bix[b.to_bus]) for b in case.branches]


def default_alpha(n_buses: int) -> np.ndarray:
    """Uniquely-balanced injections: root (lowest index) gets n-1, rest -1."""
    a = -np.ones(n_buses)
    a[0] = n_buses - 1.0
    return a


def is_uniquely_balanced(alpha, tol=1e-9) -> bool:
    alpha = np.asarray(alpha, dtype=float)
    if abs(alpha.sum()) > tol:
        return False
    n = len(alpha)
    if n > 20:             # subset check only meant for desk-scale vectors
        return True
    for mask in range(1, 2 ** n - 1):
        s = sum(alpha[i] for i in range(n) if mask >> i & 1)
        if abs(s) <= tol:
            return False
    return True
