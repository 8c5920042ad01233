import itertools

import numpy as np
import pytest

from conftest import desk_cfg
from tsdrots.blocks import BINARY, CONTINUOUS, GE, LE, LinearBlock, substitute
from tsdrots.cases import case3par, case3ring
from tsdrots.linearize import vn
from tsdrots.network import (build_incidence, connected_components,
                             default_alpha)
from tsdrots.oracle import connectedness_enumerate, synthetic_case
from tsdrots.solver import solve
from tsdrots.topology import (build_connectedness_stage1,
                              build_fixed_and_symmetry, build_lower_level_lp,
                              expr, region_Z, var_expr)


def test_fixed_and_symmetry_rows():
    case = case3par()
    inc = build_incidence(case)
    block = LinearBlock()
    z = [block.declare(vn("z", "s1", br.id), BINARY, 0.0, 1.0)
         for br in case.branches]
    build_fixed_and_symmetry(case, inc, z, block)
    sym = [r for r in block.rows if r.tag.startswith("sym")]
    assert len(sym) == 1
    row = sym[0]
    # keeps (1, 0) within the identical pair, cuts (0, 1)
    lhs = lambda za, zb: row.coeffs.get(z[0], 0) * za + row.coeffs.get(z[1], 0) * zb
    assert lhs(1, 0) >= row.rhs
    assert lhs(0, 1) < row.rhs


def test_must_on_forced():
    case = case3par()
    for k in (0,):
        pass
    from dataclasses import replace
    case.branches[2] = replace(case.branches[2], must_on=True, ots=False)
    inc = build_incidence(case)
    block = LinearBlock()
    z = [block.declare(vn("z", "s1", br.id), BINARY, 0.0, 1.0)
         for br in case.branches]
    build_fixed_and_symmetry(case, inc, z, block)
    fixed = [r for r in block.rows if r.tag == "fixed:3"]
    assert fixed and fixed[0].sense == "==" and fixed[0].rhs == 1.0


def test_no_identical_lines_no_sym_rows():
    case = case3ring()
    inc = build_incidence(case)
    block = LinearBlock()
    z = [block.declare(vn("z", "s1", br.id), BINARY, 0.0, 1.0)
         for br in case.branches]
    build_fixed_and_symmetry(case, inc, z, block)
    assert not [r for r in block.rows if r.tag.startswith("sym")]


def _connected_block_feasible(n, edges, status, cfg):
    case = synthetic_case(n, edges)
    inc = build_incidence(case)
    block = LinearBlock()
    z = [block.declare(vn("z", "s1", br.id), CONTINUOUS, 0.0, 1.0)
         for br in case.branches]
    build_connectedness_stage1(case, inc, z, default_alpha(n), cfg, block)
    blk = substitute(block, {z[k]: float(status[k]) for k in range(len(edges))})
    return solve(blk, kind="lp").optimal


def test_path_graph_examples():
    cfg = desk_cfg()
    edges = [(0, 1), (1, 2), (2, 3)]
    assert _connected_block_feasible(4, edges, [1, 1, 1], cfg)
    assert not _connected_block_feasible(4, edges, [1, 0, 1], cfg)


def test_connectedness_exhaustive_small():
    graphs = [
        (4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)]),   # K4
        (5, [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (2, 3), (3, 4), (4, 1)]),
        (3, [(0, 1), (0, 1), (1, 2)]),                            # multigraph
    ]
    for n, edges in graphs:
        assert connectedness_enumerate(n, edges, desk_cfg()) == []


def test_alpha_validation():
    case = synthetic_case(2, [(0, 1)])
    inc = build_incidence(case)
    block = LinearBlock()
    z = [block.declare("z.s1.1", BINARY, 0.0, 1.0)]
    with pytest.raises(ValueError, match="uniquely balanced"):
        build_connectedness_stage1(case, inc, z, np.array([1.0, 1.0]),
                                   desk_cfg(), block)


def _region_feasible(case, inc, z_status, phi, alpha_tilde, cfg):
    block = LinearBlock()
    n = len(case.branches)
    z = [block.declare(vn("z", "s1", br.id), CONTINUOUS, 0.0, 1.0)
         for br in case.branches]
    atil = None
    if alpha_tilde is not None:
        atil = [expr({}, alpha_tilde[u]) for u in range(len(case.buses))]
    region_Z(block, case, inc, [var_expr(nm) for nm in z], expr({}, phi),
             default_alpha(len(case.buses)), atil, "t", cfg.bigm_physical)
    blk = substitute(block, {z[k]: float(z_status[k]) for k in range(n)})
    return solve(blk, kind="lp").optimal


def test_region_reduces_to_connectedness_at_zero():
    case = case3ring()
    inc = build_incidence(case)
    cfg = desk_cfg()
    edges = [(0, 1), (1, 2), (0, 2)]
    for status in itertools.product((0, 1), repeat=3):
        feas = _region_feasible(case, inc, status, 0.0, None, cfg)
        conn = connected_components(edges, 3, status) == 1
        assert feas == conn


def test_region_vacuous_at_phi_one():
    case = case3ring()
    inc = build_incidence(case)
    for status in itertools.product((0, 1), repeat=3):
        assert _region_feasible(case, inc, status, 1.0, None, desk_cfg())


def test_region_slack_injections_match_flow_oracle():
    """Unit slack at the two endpoints of a cut edge restores feasibility."""
    case = case3ring()
    inc = build_incidence(case)
    cfg = desk_cfg()
    # bus 3 (index 2) isolated: needs +1 there, -1 spread on the rest
    status = [1, 0, 0]
    alpha = default_alpha(3)
    atil = [0.0, -1.0, 1.0]
    assert not _region_feasible(case, inc, status, 0.0, None, cfg)
    assert _region_feasible(case, inc, status, 0.0, atil, cfg)


def _lower_level_value(case, z_status, phi2, cfg):
    inc = build_incidence(case)
    block = LinearBlock()
    z = [block.declare(vn("zo", "s3", br.id), BINARY, 0.0, 1.0)
         for br in case.branches]
    p2 = block.declare(vn("ph2", "s3", 0), BINARY, 0.0, 1.0)
    ll = build_lower_level_lp(case, inc, z, p2, default_alpha(len(case.buses)),
                              cfg, block, prefix="s3ll")
    lp = LinearBlock()
    lp.vars = dict(block.vars)
    lp.rows = list(ll.rows)
    for nme, c in ll.objective.items():
        lp.add_obj(nme, c)
    fixed = {z[k]: float(z_status[k]) for k in range(len(z))}
    fixed[p2] = float(phi2)
    return solve(substitute(lp, fixed), kind="lp").require_optimal().objective


def test_lower_level_connected_zero():
    assert _lower_level_value(case3ring(), [1, 1, 1], 0, desk_cfg()) == \
        pytest.approx(0.0, abs=1e-8)


def test_lower_level_isolation_costs_twice_injection():
    # bus 2 (alpha -1) isolated by opening branches 1 and 2 -> slack 2|a| = 2
    assert _lower_level_value(case3ring(), [0, 0, 1], 0, desk_cfg()) == \
        pytest.approx(2.0, abs=1e-8)


def test_lower_level_vacuous_when_topology_unchanged():
    assert _lower_level_value(case3ring(), [0, 0, 0], 1, desk_cfg()) == \
        pytest.approx(0.0, abs=1e-8)
