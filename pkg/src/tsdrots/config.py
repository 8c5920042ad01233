"""Run configuration: one flat dotted-key namespace shared by CLI and API.

Config files are plain text, one `key = value` pair per line with `#`
comments; CLI flags override file values.  The effective configuration is
echoed into every report header so runs are reproducible.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # Big-M policy: physical gating, dual-variable caps, complementarity factor
    bigm_physical: float = 1.0e7
    bigm_dual: float = 1.0e8
    bigm_comp_factor: float = 5.0
    bigm_kkt_dual: float | None = None   # cap on lower-level duals; default bigm_dual
    # discretization
    n_p: int = 10                 # cosine envelope segments
    n_s: int = 6                  # VRE capability sectors
    # recourse penalties; None derives 10 * max shed cost from the case
    sigma2: float | None = None
    sigma3: float | None = None
    # topology block
    k_max: int = 1
    k_b: int = 1
    r: float = 1.0
    n_m: int = 2
    alpha_mode: str = "root"
    nc_stage1: bool = True
    nc_stage3: bool = True
    symmetry: bool = True
    # model variants (switching involvement)
    allow_ots: bool = True        # first-stage switching
    allow_corrective: bool = True  # third-stage switching
    # algorithm tolerances
    eps1: float = 0.01
    eps2: float = 0.001
    eps3: float = 0.01
    n_max: int = 20
    n_o: int = 5
    outer_cap: int = 30
    workers: int = 1
    # solver
    mip_gap: float = 0.005
    time_limit: float | None = None
    # uncertainty defaults
    omega_cap: int = 100000
    fail_gen: tuple = (0.0085, 0.0115)
    fail_trafo: tuple = (0.004, 0.006)
    fail_line: tuple = (0.00075, 0.00125)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.eps1 < 1.0 and 0.0 < self.eps3 < 1.0):
            raise ConfigError("eps1 and eps3 must lie in (0, 1)")
        if self.n_o < 1 or self.n_max < 1:
            raise ConfigError("n_o and n_max must be >= 1")
        if self.k_b < 0 or self.k_b > self.k_max:
            raise ConfigError("need 0 <= k_b <= k_max")
        if self.alpha_mode != "root":
            raise ConfigError(f"unknown alpha_mode {self.alpha_mode!r}")

    @property
    def kkt_dual_cap(self):
        return self.bigm_kkt_dual if self.bigm_kkt_dual is not None else self.bigm_dual

    def sigma2_for(self, case):
        return self.sigma2 if self.sigma2 is not None else default_penalty(case)

    def sigma3_for(self, case):
        return self.sigma3 if self.sigma3 is not None else default_penalty(case)


def default_penalty(case):
    """Recourse-slack price: one slack unit relaxes every row of a stage at
    once, so it must outprice the combined marginal value of shedding all
    load, regulating every unit and switching every line."""
    total = sum(d.w_shed for d in case.loads)
    total += sum(g.w_up + g.w_dn for g in case.conv)
    total += sum(g.w_up + g.w_dn for g in case.vre)
    total += sum(br.w_switch for br in case.branches)
    for g in case.conv:
        slopes = [(g.pw_cost[i + 1] - g.pw_cost[i]) / (g.pw_p[i + 1] - g.pw_p[i])
                  for i in range(len(g.pw_p) - 1)]
        total += max(slopes, default=0.0)
    return 10.0 * max(total, 1.0)


# keys as they appear in config files / report headers -> dataclass fields
KEYMAP = {
    "bigM.physical": "bigm_physical",
    "bigM.dual": "bigm_dual",
    "bigM.comp_factor": "bigm_comp_factor",
    "bigM.kkt_dual": "bigm_kkt_dual",
    "linearize.n_p": "n_p",
    "linearize.n_s": "n_s",
    "penalty.sigma2": "sigma2",
    "penalty.sigma3": "sigma3",
    "topology.k_max": "k_max",
    "topology.k_b": "k_b",
    "topology.r": "r",
    "topology.n_m": "n_m",
    "topology.alpha_mode": "alpha_mode",
    "topology.nc_stage1": "nc_stage1",
    "topology.nc_stage3": "nc_stage3",
    "topology.symmetry": "symmetry",
    "variant.allow_ots": "allow_ots",
    "variant.allow_corrective": "allow_corrective",
    "ccg.eps1": "eps1",
    "ccg.eps2": "eps2",
    "ccg.eps3": "eps3",
    "ccg.n_max": "n_max",
    "ccg.n_o": "n_o",
    "ccg.outer_cap": "outer_cap",
    "ccg.workers": "workers",
    "solver.mip_gap": "mip_gap",
    "solver.time_limit": "time_limit",
    "uncertainty.omega_cap": "omega_cap",
    "seed": "seed",
}
_FIELDMAP = {v: k for k, v in KEYMAP.items()}


def _coerce(fieldname, text):
    text = text.strip()
    if text.lower() in ("none", ""):
        return None
    kinds = {f.name: f.type for f in fields(RunConfig)}
    t = kinds[fieldname]
    if "bool" in str(t):
        return text.lower() in ("1", "true", "yes", "on")
    if "int" in str(t):
        return int(text)
    if "str" in str(t):
        return text
    return float(text)


def parse_config(text: str, base: dict | None = None) -> dict:
    out = dict(base or {})
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KEYMAP:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        out[KEYMAP[key]] = _coerce(KEYMAP[key], val)
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """File (explicit path or $TSDROTS_CONFIG) first, then overrides."""
    values: dict = {}
    path = path or os.environ.get("TSDROTS_CONFIG")
    if path:
        with open(path, encoding="utf-8") as fh:
            values = parse_config(fh.read())
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    return RunConfig(**values)


def effective_config_lines(cfg: RunConfig):
    out = []
    for f in fields(RunConfig):
        key = _FIELDMAP.get(f.name)
        if key is None:
            continue
        out.append(f"{key} = {getattr(cfg, f.name)}")
    return out
