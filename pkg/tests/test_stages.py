import numpy as np
import pytest

from conftest import desk_cfg
from tsdrots.blocks import BINARY, LinearBlock, stamp, substitute
from tsdrots.cases import case2, case3ring
from tsdrots.network import build_incidence
from tsdrots.solver import SolverHandle, solve
from tsdrots.stages import (assemble_stage1, assemble_stage2, assemble_stage3,
                            build_stage_templates)
from tsdrots.uncertainty import ContingencyVector


def test_stage1_binary_census(toy3):
    s1 = assemble_stage1(toy3, cfg=desk_cfg())
    bins = s1.binaries()
    assert len(bins) == len(toy3.branches)
    assert all(b.startswith("z.s1.") for b in bins)


def test_stage1_two_bus_dispatch_equals_load():
    s1 = assemble_stage1(case2(), cfg=desk_cfg())
    sol = solve(s1.block, handle=SolverHandle(mip_gap=1e-6)).require_optimal()
    assert sol.values["pc.s1.1"] == pytest.approx(1.0, abs=1e-6)
    assert sol.objective == pytest.approx(10.0, abs=1e-4)


def test_stage1_families_all_A(toy3):
    s1 = assemble_stage1(toy3, cfg=desk_cfg())
    assert {r.family for r in s1.block.rows} == {"A"}


def test_table_row_inventory(toy3):
    """Audit: emitted row-tag families match the constraint-to-family map."""
    inc, s1, s2, s3 = build_stage_templates(toy3, desk_cfg())
    tags1 = {r.tag.split(":")[0] for r in s1.block.rows}
    assert tags1 == {"pwl", "lpac", "bal", "oct", "vre", "thlim", "cc1"}
    tags2 = {r.tag.split(":")[0] for r in s2.block.rows}
    assert tags2 == {"lpac", "bal", "oct", "vre", "thlim", "couple", "ramp",
                     "shift"}
    expect_f = {"shed", "lpac", "bal", "oct", "vre", "thlim", "switch",
                "shift", "cc3", "ll"}
    by_family = {}
    for r in s3.block.rows:
        by_family.setdefault(r.family, set()).add(r.tag.split(":")[0])
    assert by_family["F"] >= (expect_f - {"ll"})
    assert "gate" in by_family["M"] and "cc3" in by_family["M"]
    assert by_family["R"] == {"gate", "switch"}
    # every bilinear row touches exactly one contingency entry
    for r in s3.block.rows:
        if r.obil:
            assert len({j for j, _, _ in r.obil}) == 1


def test_symmetry_toggle(toy3par):
    on = assemble_stage1(toy3par, cfg=desk_cfg())
    off = assemble_stage1(toy3par, cfg=desk_cfg(symmetry=False))
    assert any(r.tag.startswith("sym") for r in on.block.rows)
    assert not any(r.tag.startswith("sym") for r in off.block.rows)


def test_eps_affinity(toy3):
    """d(eps) evaluates exactly linearly."""
    s2 = assemble_stage2(toy3, cfg=desk_cfg())
    e1, e2 = np.array([0.3]), np.array([-0.2])
    rows0 = stamp(s2.block, eps=np.zeros(1)).rows
    rows1 = stamp(s2.block, eps=e1).rows
    rows2 = stamp(s2.block, eps=e2).rows
    rows12 = stamp(s2.block, eps=e1 + e2).rows
    for r0, r1, r2, r12 in zip(rows0, rows1, rows2, rows12):
        assert r1.rhs + r2.rhs - r0.rhs == pytest.approx(r12.rhs, abs=1e-12)


def test_o_affinity(toy3):
    """S(o) and the o-linear parts evaluate exactly affinely."""
    s3 = assemble_stage3(toy3, cfg=desk_cfg())
    n = toy3.n_components
    rng = np.random.default_rng(5)
    o1, o2 = rng.uniform(size=n), rng.uniform(size=n)
    for ra, rb, rc, rd in zip(stamp(s3.block, o=o1).rows,
                              stamp(s3.block, o=o2).rows,
                              stamp(s3.block, o=o1 + o2).rows,
                              stamp(s3.block, o=np.zeros(n)).rows):
        lhs = {}
        for n_, c in ra.coeffs.items():
            lhs[n_] = lhs.get(n_, 0.0) + c
        for n_, c in rb.coeffs.items():
            lhs[n_] = lhs.get(n_, 0.0) - c
        # coefficient affinity: stamp(o1) + stamp(o2) - stamp(0) == stamp(o1+o2)
        for n_ in set(lhs) | set(rc.coeffs) | set(rd.coeffs):
            left = ra.coeffs.get(n_, 0.0) + rb.coeffs.get(n_, 0.0) - rd.coeffs.get(n_, 0.0)
            assert left == pytest.approx(rc.coeffs.get(n_, 0.0), abs=1e-12)
        assert ra.rhs + rb.rhs - rd.rhs == pytest.approx(rc.rhs, abs=1e-12)


def test_stage2_replica_admits_stage1_solution(toy3):
    """With zero forecast error the stage-1 point extends to stage 2 at zero
    regulation cost."""
    cfg = desk_cfg()
    inc, s1, s2, s3 = build_stage_templates(toy3, cfg)
    master = LinearBlock()
    master.merge(s1.block)
    master.merge(stamp(s2.block, eps=np.zeros(1)))
    sol = solve(master, kind="milp",
                handle=SolverHandle(mip_gap=1e-6)).require_optimal()
    s1_only = solve(s1.block, kind="milp",
                    handle=SolverHandle(mip_gap=1e-6)).require_optimal()
    assert sol.objective == pytest.approx(s1_only.objective, rel=1e-5)


def test_stage3_inactive_at_all_ones(toy3):
    """o = 1 admits the carried-over point with zero third-stage action."""
    cfg = desk_cfg()
    inc, s1, s2, s3tpl = build_stage_templates(toy3, cfg)
    from tsdrots.reformulate import build_tractable
    inc, s1, s2p, s3p = build_tractable(toy3, cfg)
    master = LinearBlock()
    master.merge(s1.block)
    master.merge(stamp(s2p.block, eps=np.zeros(1)))
    s3c = stamp(s3p.block, o=ContingencyVector.all_on(toy3.n_components).as_array())
    master.merge(s3c)
    sol = solve(master, kind="milp",
                handle=SolverHandle(mip_gap=1e-6)).require_optimal()
    c3 = sum(c * sol.values[k] for k, c in s3p.block.obj.items())
    assert c3 == pytest.approx(0.0, abs=1e-5)


def test_stage3_generator_fault_gates(toy3):
    """A failed conventional unit is pinned to zero output and regulation."""
    cfg = desk_cfg()
    from tsdrots.reformulate import build_tractable
    inc, s1, s2p, s3p = build_tractable(toy3, cfg)
    o = np.ones(toy3.n_components)
    o[0] = 0.0                      # the conventional unit
    blk = stamp(s3p.block, o=o)
    # force no recourse slack so the gates bind exactly
    from tsdrots.blocks import VarDecl
    blk.vars["y3.s3.0"] = VarDecl("y3.s3.0", "c", 0.0, 0.0)
    ups = {n: 0.0 for n in blk.vars if n.split(".", 2)[1] in ("s1", "s2")}
    for br in toy3.branches:
        ups[f"z.s1.{br.id}"] = 1.0
    for b in toy3.buses:
        ups[f"v.s2.{b.id}"] = 1.0
        ups.pop(f"th.s1.{b.id}", None)
    ups["pc.s2.1"] = 0.6
    ups["pv.s2.1"] = 0.6
    ups["pvmax.s2.1"] = 0.8
    blk = substitute(blk, {k: v for k, v in ups.items() if k in blk.vars})
    sol = solve(blk, kind="milp", handle=SolverHandle(mip_gap=1e-5))
    assert sol.optimal
    assert sol.values["pc.s3.1"] == pytest.approx(0.0, abs=1e-6)
    assert sol.values["pcp.s3.1"] == pytest.approx(0.0, abs=1e-6)
    assert sol.values["pcm.s3.1"] == pytest.approx(0.0, abs=1e-6)


def test_stage3_shed_keeps_power_factor(toy3):
    """Serving half of a load keeps its reactive share proportional."""
    cfg = desk_cfg()
    s3 = assemble_stage3(toy3, cfg=desk_cfg())
    d = toy3.loads[0]
    qrows = [r for r in s3.block.rows if r.tag == f"bal:q:{d.bus}"]
    assert qrows
    coeff = qrows[0].coeffs.get(f"pd3.s3.{d.id}")
    assert coeff == pytest.approx(-d.q / d.p)
