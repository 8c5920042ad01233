"""Command-line entry point: solve, oracle, scenarios, validate.

Reports are plain structured text with the effective configuration echoed in
the header; exit codes are 0 (success/convergence), 2 (iteration cap), and
1 (errors).  The config file provided via --config or $TSDROTS_CONFIG seeds
the settings, and every flag overrides its config-file equivalent.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import ccg, oracle
from .config import KEYMAP, ConfigError, RunConfig, effective_config_lines, \
    load_config, parse_config
from .network import CaseError, load_case
from .solver import SolverError
from .uncertainty import (UncertaintyError, default_ambiguity,
                          generate_scenarios, read_scenarios, reduce_scenarios,
                          write_scenarios)


def _common_flags(p):
    p.add_argument("--config", help="config file (default: $TSDROTS_CONFIG)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--kmax", type=int, help="maximal number of failed components")
    p.add_argument("--kb", type=int, help="guaranteed-connected fault depth")
    p.add_argument("--eps1", type=float, help="outer relative gap tolerance")
    p.add_argument("--eps2", type=float, help="pricing value tolerance")
    p.add_argument("--eps3", type=float, help="inner relative gap tolerance")
    p.add_argument("--n-o", type=int, dest="n_o", help="contingencies promoted per scenario")
    p.add_argument("--outer-cap", type=int, help="outer iteration cap")
    p.add_argument("--workers", type=int, help="parallel pricing workers")
    p.add_argument("--mip-gap", type=float, help="backend relative MIP gap")
    p.add_argument("--seed", type=int, help="random seed")


def _config_from(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides.update(parse_config(item))
    for flag, key in (("kmax", "k_max"), ("kb", "k_b"), ("eps1", "eps1"),
                      ("eps2", "eps2"), ("eps3", "eps3"), ("n_o", "n_o"),
                      ("outer_cap", "outer_cap"), ("workers", "workers"),
                      ("mip_gap", "mip_gap"), ("seed", "seed")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = val
    return load_config(args.config, overrides)


def _scenarios_for(args, case, cfg):
    if getattr(args, "scenarios", None):
        return read_scenarios(args.scenarios)
    count = getattr(args, "scen_count", None) or 1
    keep = getattr(args, "scen_keep", None)
    scen = generate_scenarios(case, count, getattr(args, "sigma_frac", 0.15),
                              seed=cfg.seed)
    if keep:
        scen = reduce_scenarios(scen, keep)
    return scen


def _header(cfg, case_path):
    out = ["# tsdrots report", f"# case {case_path}", "[config]"]
    out.extend(effective_config_lines(cfg))
    return out


def cmd_solve(args):
    cfg = _config_from(args)
    case = load_case(args.case)
    scen = _scenarios_for(args, case, cfg)
    amb = default_ambiguity(case, cfg)
    res, trace = ccg.run(case, scen, amb, cfg,
                         progress=(None if args.quiet else print))
    lines = _header(cfg, args.case)
    lines += ["[summary]",
              f"status {res['termination']}",
              f"q1 {res['q1']!r}",
              f"q_lb {res['q_lb']!r}",
              f"q_ub {res['q_ub']!r}",
              f"gap {res['gap']!r}",
              f"stage1_cost {res['objective_stage1']!r}",
              f"ub_valid {int(trace.ub_valid)}",
              f"wall {res['wall']:.2f}",
              "[topology]"]
    for bid, zv in sorted(res["z"].items()):
        lines.append(f"{bid} {int(round(zv))}")
    lines.append("[dispatch]")
    v = res["values"]
    for g in case.conv:
        lines.append(f"pc {g.id} {v[f'pc.s1.{g.id}']!r}")
        lines.append(f"qc {g.id} {v[f'qc.s1.{g.id}']!r}")
    for g in case.vre:
        lines.append(f"pv {g.id} {v[f'pv.s1.{g.id}']!r}")
        lines.append(f"qv {g.id} {v[f'qv.s1.{g.id}']!r}")
    for b in case.buses:
        lines.append(f"v {b.id} {v[f'v.s1.{b.id}']!r}")
    lines.append("[trace]")
    lines.extend(trace.lines())
    text = "\n".join(lines) + "\n"
    out = args.out or (args.case + ".solution.txt")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(text)
    if not args.quiet:
        print(f"solution written to {out}")
    return 0 if res["termination"] == "converged" else 2


def _read_solution(path):
    section, out = None, {"topology": {}, "summary": {}}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("["):
                section = line[1:-1]
                continue
            if section == "summary":
                key, val = line.split(None, 1)
                out["summary"][key] = val
            elif section == "topology":
                bid, zv = line.split()
                out["topology"][int(bid)] = float(zv)
    return out


def cmd_oracle(args):
    cfg = _config_from(args)
    case = load_case(args.case)
    scen = _scenarios_for(args, case, cfg)
    amb = default_ambiguity(case, cfg)
    lines = _header(cfg, args.case)
    code = 0
    if args.zeta:
        if not args.against:
            raise oracle.OracleError("--zeta needs --against <solution report>")
        prior = _read_solution(args.against)
        ks = list(range(1, cfg.k_b + 1))
        table = oracle.zeta_ratios(case, [prior["topology"]], ks)
        lines.append("[zeta]")
        for k in sorted(table):
            lines.append(f"zeta_{k} {table[k]!r}")
    else:
        q1, sol, omega = oracle.extensive_solve(case, scen, amb, cfg,
                                                cap=args.cap)
        lines += ["[oracle]", f"q1 {q1!r}", f"omega {len(omega)}"]
        if args.against:
            prior = _read_solution(args.against)
            ref = float(prior["summary"]["q1"])
            gap = abs(q1 - ref) / max(abs(q1), 1e-9)
            agree = gap <= cfg.eps1 + 2 * cfg.mip_gap
            lines.append(f"solver_q1 {ref!r}")
            lines.append(f"relative_gap {gap!r}")
            lines.append(f"agreement {int(agree)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return code


def cmd_scenarios(args):
    cfg = _config_from(args)
    case = load_case(args.case)
    if args.keep is not None and args.keep > args.count:
        raise UncertaintyError("--keep must not exceed --count")
    scen = generate_scenarios(case, args.count, args.sigma_frac, seed=cfg.seed)
    if args.keep is not None:
        scen = reduce_scenarios(scen, args.keep)
    write_scenarios(scen, args.out)
    print(f"{len(scen)} scenarios written to {args.out}")
    return 0


def cmd_validate(args):
    case = load_case(args.case)
    print(f"ok: {len(case.buses)} buses, {len(case.branches)} branches, "
          f"{len(case.conv)} conventional, {len(case.vre)} vre, "
          f"{len(case.loads)} loads, {len(case.sym_groups())} identical-line groups")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="tsdrots",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="run the decomposition solver")
    ps.add_argument("case")
    ps.add_argument("--scenarios", help="scenario file (else generated)")
    ps.add_argument("--scen-count", type=int, default=1)
    ps.add_argument("--scen-keep", type=int)
    ps.add_argument("--sigma-frac", type=float, default=0.15)
    ps.add_argument("--out")
    ps.add_argument("--quiet", action="store_true")
    _common_flags(ps)
    ps.set_defaults(func=cmd_solve)

    po = sub.add_parser("oracle", help="monolithic/enumeration checks")
    po.add_argument("case")
    po.add_argument("--against", help="prior solution report to compare")
    po.add_argument("--scenarios")
    po.add_argument("--scen-count", type=int, default=1)
    po.add_argument("--scen-keep", type=int)
    po.add_argument("--sigma-frac", type=float, default=0.15)
    po.add_argument("--cap", type=int, default=400)
    po.add_argument("--zeta", action="store_true",
                    help="connectedness-ratio table for a prior topology")
    po.add_argument("--out")
    _common_flags(po)
    po.set_defaults(func=cmd_oracle)

    pg = sub.add_parser("scenarios", help="generate and reduce scenarios")
    pg.add_argument("case")
    pg.add_argument("--count", type=int, required=True)
    pg.add_argument("--keep", type=int)
    pg.add_argument("--sigma-frac", type=float, default=0.15)
    pg.add_argument("--out", required=True)
    _common_flags(pg)
    pg.set_defaults(func=cmd_scenarios)

    pv = sub.add_parser("validate", help="parse and validate a case file")
    pv.add_argument("case")
    pv.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CaseError, ConfigError, UncertaintyError, SolverError,
            oracle.OracleError, OSError, ccg.MasterInfeasible) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
