import math

import numpy as np
import pytest

from conftest import desk_cfg
from tsdrots.blocks import BINARY, CONTINUOUS, GE, LE, LinearBlock, substitute
from tsdrots.cases import case2, case3ring
from tsdrots.linearize import (CosineEnvelopeConfig, build_bus_balance,
                               build_lpac_branch, build_octagon_thermal,
                               build_pwl_cost, build_vre_capability,
                               pwl_cost_value, vn, vre_angle_grid)
from tsdrots.network import build_incidence
from tsdrots.solver import solve


def envelope_value(theta, theta_max, n_p):
    """Independent oracle: min over tangent lines of cos, capped at one."""
    pts = np.array(CosineEnvelopeConfig(n_p).tangent_points(theta_max))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    vals = np.cos(pts)[:, None] - np.sin(pts)[:, None] * (theta[None, :] - pts[:, None])
    return np.minimum(vals.min(axis=0), 1.0)


def pwl_lp_value(gen, p_fix):
    block = LinearBlock()
    build_pwl_cost_single(block, gen)
    block.add_row({vn("pc", "s1", gen.id): 1.0}, "==", p_fix, tag="fix")
    sol = solve(block, kind="lp")
    assert sol.optimal
    return sol.objective


def build_pwl_cost_single(block, gen):
    from tsdrots.cases import case2
    case = case2()
    case.conv = [gen]
    build_pwl_cost(case, "s1", block)


def test_pwl_midpoint_value():
    gen = case2().conv[0]          # samples (0,1,2) -> (0,10,25)
    assert pwl_lp_value(gen, 1.5) == pytest.approx(17.5)


def test_pwl_vertex_exact():
    gen = case2().conv[0]
    for p, eta in zip(gen.pw_p, gen.pw_cost):
        assert pwl_lp_value(gen, p) == pytest.approx(eta)


def test_pwl_random_matches_segment_search(rng):
    from tsdrots.network import ConvGen
    for trial in range(10):
        k = int(rng.integers(3, 6))
        pts = np.sort(rng.uniform(0.0, 3.0, size=k))
        pts[0] = 0.0
        slopes = np.cumsum(rng.uniform(0.5, 5.0, size=k - 1))
        eta = np.concatenate([[0.0], np.cumsum(slopes * np.diff(pts))])
        gen = ConvGen(1, 1, float(pts[0]), float(pts[-1]), -1.0, 1.0, 1.0, 1.0,
                      1.0, 1.0, tuple(pts), tuple(eta))
        p = float(rng.uniform(pts[0], pts[-1]))
        assert pwl_lp_value(gen, p) == pytest.approx(pwl_cost_value(gen, p),
                                                     abs=1e-7)


def test_envelope_dominates_cos_and_gap_bound():
    theta_max, n_p = 0.6, 10
    grid = np.linspace(-theta_max, theta_max, 1000)
    env = envelope_value(grid, theta_max, n_p)
    gap = env - np.cos(grid)
    assert np.all(gap >= -1e-12)
    theta_p = 2 * theta_max / (1 + n_p)
    # interior points sit within theta_p/2 of a tangent: sagitta bound;
    # the outermost tangent is theta_p from the ends: second-order end bound
    sagitta = 1.0 - math.cos(theta_p / 2.0)
    interior = np.abs(grid) <= theta_max - theta_p
    assert gap[interior].max() <= sagitta + 1e-12
    assert gap.max() <= theta_p ** 2 / 2.0 + 1e-12


def test_envelope_peak_attainable():
    assert envelope_value(0.0, 0.5, 8)[0] == pytest.approx(1.0)


def _lpac_fixture(case, cfg, zvals):
    inc = build_incidence(case)
    block = LinearBlock()
    z = [block.declare(vn("z", "s1", br.id), BINARY, 0.0, 1.0)
         for br in case.branches]
    build_lpac_branch(case, inc, z, "s1", cfg, block)
    build_octagon_thermal(case, inc, z, "s1", cfg, block)
    return substitute(block, {z[k]: zvals[k] for k in range(len(z))})


def test_gating_forces_zero_flow():
    case, cfg = case3ring(), desk_cfg()
    blk = _lpac_fixture(case, cfg, [0.0, 1.0, 1.0])
    br = case.branches[0]
    for sym in ("pfb", "ptb", "qfb", "qtb"):
        probe = LinearBlock()
        probe.merge(blk)
        probe.add_obj(vn(sym, "s1", br.id), 1.0)
        lo = solve(probe, kind="lp").require_optimal().objective
        probe.obj = {vn(sym, "s1", br.id): -1.0}
        hi = -solve(probe, kind="lp").require_optimal().objective
        assert lo == pytest.approx(0.0, abs=1e-7)
        assert hi == pytest.approx(0.0, abs=1e-7)


def test_open_branch_block_feasible_with_bigM_slack():
    case, cfg = case3ring(), desk_cfg()
    blk = _lpac_fixture(case, cfg, [0.0, 1.0, 1.0])
    assert solve(blk, kind="lp").optimal


def test_envelope_rows_match_oracle():
    case, cfg = case2(), desk_cfg(n_p=7)
    inc = build_incidence(case)
    block = LinearBlock()
    z = [block.declare(vn("z", "s1", br.id), BINARY, 0.0, 1.0)
         for br in case.branches]
    build_lpac_branch(case, inc, z, "s1", cfg, block)
    blk = substitute(block, {z[0]: 1.0})
    br = case.branches[0]
    rng = np.random.default_rng(7)
    for theta in rng.uniform(-br.theta_max, br.theta_max, size=12):
        probe = LinearBlock()
        probe.merge(blk)
        probe.add_row({vn("th", "s1", br.from_bus): 1.0,
                       vn("th", "s1", br.to_bus): -1.0}, "==", theta, tag="fx")
        probe.add_obj(vn("cphi", "s1", br.id), -1.0)
        sol = solve(probe, kind="lp").require_optimal()
        assert -sol.objective == pytest.approx(
            envelope_value(theta, br.theta_max, cfg.n_p)[0], abs=1e-8)


def test_octagon_examples_and_containment(rng):
    case, cfg = case2(), desk_cfg()
    s = case.branches[0].s_max
    blk = _lpac_fixture(case, cfg, [1.0])
    rows = [r for r in blk.rows if r.tag.startswith("oct:fb")]

    def feasible(p, q):
        names = {vn("pfb", "s1", 1): p, vn("qfb", "s1", 1): q}
        return all(sum(c * names.get(n, 0.0) for n, c in r.coeffs.items())
                   <= r.rhs + 1e-12 for r in rows)

    assert feasible(s, 0.0)                      # axis vertex on the boundary
    assert not feasible(0.75 * s, 0.75 * s)      # (p+q)/sqrt2 = 1.06 s
    pts = rng.uniform(-1.0, 1.0, size=(10000, 2))
    pts *= (s / np.maximum(np.linalg.norm(pts, axis=1), 1e-12)
            * np.sqrt(rng.uniform(0, 1, size=10000)))[:, None]
    assert all(feasible(p, q) for p, q in pts)   # circle inside the octagon


def test_vre_sector_examples():
    case, cfg = case3ring(), desk_cfg()
    g = case.vre[0]
    block = LinearBlock()
    build_vre_capability(case, "s1", 6, cfg, block=block)
    rows = [r for r in block.rows if r.tag.startswith(("vre:mva", "vre:pf"))]

    def feasible(p, q):
        vals = {vn("pv", "s1", g.id): p, vn("qv", "s1", g.id): q}
        return all(sum(c * vals.get(n, 0.0) for n, c in r.coeffs.items())
                   <= r.rhs + 1e-9 for r in rows)

    assert feasible(0.0, -0.99 * g.s_max)        # touches the gamma=0 tangent
    assert not feasible(1.01 * g.s_max, 0.0)
    p = 0.3
    qcap = p * math.tan(math.acos(g.pf_min))
    assert not feasible(p, qcap * 1.05)          # power-factor cut
    assert feasible(p, qcap * 0.95)


def test_vre_angle_grid_spans():
    g = case3ring().vre[0]
    grid = vre_angle_grid(g, 6)
    assert grid[0] == pytest.approx(-math.pi / 2)
    assert grid[-1] == pytest.approx(math.acos(g.pf_min))


def test_two_bus_balance_oracle():
    """Lossless two-bus case: the linear balance forces dispatch = load and
    the flow equals the hand-solved value."""
    case, cfg = case2(), desk_cfg()
    inc = build_incidence(case)
    block = LinearBlock()
    z = [block.declare(vn("z", "s1", br.id), BINARY, 0.0, 1.0)
         for br in case.branches]
    for b in case.buses:
        block.declare(vn("v", "s1", b.id), CONTINUOUS, b.v_min, b.v_max)
    g = case.conv[0]
    block.declare(vn("pc", "s1", g.id), CONTINUOUS, g.p_min, g.p_max)
    build_lpac_branch(case, inc, z, "s1", cfg, block)
    build_bus_balance(case, inc, z, "s1", cfg,
                      [({}, d.p) for d in case.loads],
                      [({}, d.q) for d in case.loads], block)
    blk = substitute(block, {z[0]: 1.0})
    blk.add_obj(vn("pc", "s1", 1), 1.0)
    sol = solve(blk, kind="lp").require_optimal()
    assert sol.objective == pytest.approx(1.0, abs=1e-9)     # load, no loss
    assert sol.values[vn("pfb", "s1", 1)] == pytest.approx(1.0, abs=1e-9)
    assert sol.values[vn("ptb", "s1", 1)] == pytest.approx(-1.0, abs=1e-9)


def test_balance_product_rows():
    """Closed branch pins the voltage product at v; open branch at zero."""
    case, cfg = case2(), desk_cfg()
    inc = build_incidence(case)
    block = LinearBlock()
    z = [block.declare(vn("z", "s1", br.id), BINARY, 0.0, 1.0)
         for br in case.branches]
    for b in case.buses:
        block.declare(vn("v", "s1", b.id), CONTINUOUS, b.v_min, b.v_max)
    build_bus_balance(case, inc, z, "s1", cfg,
                      [({}, 0.0) for _ in case.loads],
                      [({}, 0.0) for _ in case.loads], block)
    prod_rows = [r for r in block.rows if r.tag.startswith("bal:prod:1_1")]
    blk = substitute(LinearBlock().merge(block), {z[0]: 1.0,
                                                  vn("v", "s1", 1): 1.0})
    keep = LinearBlock()
    keep.vars = dict(blk.vars)
    keep.rows = [r for r in blk.rows if r.tag.startswith("bal:prod:1_1")]
    u = vn("u", "s1", "1_1")
    keep.add_obj(u, 1.0)
    lo = solve(keep, kind="lp").require_optimal().objective
    keep.obj = {u: -1.0}
    hi = -solve(keep, kind="lp").require_optimal().objective
    assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)
    blk0 = substitute(LinearBlock().merge(block), {z[0]: 0.0,
                                                   vn("v", "s1", 1): 1.0})
    keep0 = LinearBlock()
    keep0.vars = dict(blk0.vars)
    keep0.rows = [r for r in blk0.rows if r.tag.startswith("bal:prod:1_1")]
    keep0.add_obj(u, 1.0)
    lo = solve(keep0, kind="lp").require_optimal().objective
    keep0.obj = {u: -1.0}
    hi = -solve(keep0, kind="lp").require_optimal().objective
    assert lo == pytest.approx(0.0) and hi == pytest.approx(0.0)
