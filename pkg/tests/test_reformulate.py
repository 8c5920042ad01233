import numpy as np
import pytest

from conftest import desk_cfg
from tsdrots.blocks import (BINARY, CONTINUOUS, GE, LE, LinearBlock, Row,
                            stamp, substitute)
from tsdrots.cases import case2, case3ring
from tsdrots.reformulate import (ReformulationError, assemble_extensive,
                                 build_tractable, dualize_dro,
                                 kkt_single_level, penalize_rcr, scope_rename,
                                 stage_of)
from tsdrots.solver import SolverHandle, solve
from tsdrots.stages import CompactStageModel, build_stage_templates
from tsdrots.topology import LowerLevel
from tsdrots.uncertainty import (AmbiguitySet, ContingencyVector,
                                 enumerate_support, generate_scenarios,
                                 worst_case_distribution, default_ambiguity)


def random_ll(rng, n_vars, n_rows):
    """Random bounded-feasible lower-level LP min l'x s.t. Wx <= u."""
    block = LinearBlock()
    xs = [block.declare(f"q.s3.{i}") for i in range(n_vars)]
    w = rng.uniform(-2.0, 2.0, size=(n_rows, n_vars))
    x0 = rng.uniform(-1.0, 1.0, size=n_vars)
    u = w @ x0 + rng.uniform(0.1, 2.0, size=n_rows)
    rows = [Row({xs[j]: float(w[i, j]) for j in range(n_vars)
                 if abs(w[i, j]) > 1e-12}, LE, float(u[i]), tag=f"rl:{i}")
            for i in range(n_rows)]
    for j in range(n_vars):            # box rows keep the LP bounded
        rows.append(Row({xs[j]: 1.0}, LE, 5.0, tag=f"bx:{j}:hi"))
        rows.append(Row({xs[j]: -1.0}, LE, 5.0, tag=f"bx:{j}:lo"))
    l = {xs[j]: float(rng.uniform(-1.0, 1.0)) for j in range(n_vars)}
    ll = LowerLevel(rows, xs, [], l)
    return CompactStageModel(3, block, lower_level=ll), ll


def lp_optimum(ll):
    lp = LinearBlock()
    for nme in ll.cont_vars:
        lp.declare(nme)
    lp.rows = list(ll.rows)
    for nme, c in ll.objective.items():
        lp.add_obj(nme, c)
    return solve(lp, kind="lp").require_optimal()


def kkt_extreme(stage3k, ll, sense):
    blk = LinearBlock()
    blk.merge(stage3k.block)
    blk.obj = {}
    for nme, c in ll.objective.items():
        blk.add_obj(nme, sense * c)
    sol = solve(blk, kind="milp",
                handle=SolverHandle(mip_gap=0.0)).require_optimal()
    return sense * sol.objective


def test_kkt_textbook_interval():
    """min x on 3 <= x <= 10: the system pins x = 3 with a positive price."""
    block = LinearBlock()
    x = block.declare("q.s3.0")
    rows = [Row({x: -1.0}, LE, -3.0, tag="lo"), Row({x: 1.0}, LE, 10.0, tag="hi")]
    ll = LowerLevel(rows, [x], [], {x: 1.0})
    s3k = kkt_single_level(CompactStageModel(3, block, lower_level=ll),
                           desk_cfg())
    lo = kkt_extreme(s3k, ll, 1.0)
    hi = kkt_extreme(s3k, ll, -1.0)
    assert lo == pytest.approx(3.0, abs=1e-7)
    assert hi == pytest.approx(3.0, abs=1e-7)
    blk = LinearBlock()
    blk.merge(s3k.block)
    sol = solve(blk, kind="milp", handle=SolverHandle(mip_gap=0.0))
    assert sol.values["lld.s3.0"] == pytest.approx(1.0, abs=1e-7)


def test_kkt_random_lps_match_argmin(rng):
    for _ in range(20):
        stage3, ll = random_ll(rng, int(rng.integers(2, 6)),
                               int(rng.integers(3, 9)))
        ref = lp_optimum(ll).objective
        s3k = kkt_single_level(stage3, desk_cfg())
        lo = kkt_extreme(s3k, ll, 1.0)
        hi = kkt_extreme(s3k, ll, -1.0)
        scale = max(1.0, abs(ref))
        assert abs(lo - ref) <= 1e-6 * scale
        assert abs(hi - ref) <= 1e-6 * scale


def test_kkt_degenerate_face():
    """Two optimal vertices: the system admits both."""
    block = LinearBlock()
    x = block.declare("q.s3.0")
    y = block.declare("q.s3.1")
    rows = [Row({x: -1.0}, LE, 0.0, tag="x0"), Row({y: -1.0}, LE, 0.0, tag="y0"),
            Row({x: 1.0, y: 1.0}, LE, 1.0, tag="cap")]
    ll = LowerLevel(rows, [x, y], [], {x: 1.0, y: 1.0})   # min x+y = 0 at origin
    s3k = kkt_single_level(CompactStageModel(3, block, lower_level=ll), desk_cfg())
    for point in ({x: 0.0, y: 0.0},):
        blk = LinearBlock()
        blk.merge(s3k.block)
        for nme, v in point.items():
            blk.add_row({nme: 1.0}, "==", v, tag="pin")
        assert solve(blk, kind="milp").optimal


def test_kkt_requires_lower_level(toy3):
    cfg = desk_cfg(nc_stage3=False)
    inc, s1, s2, s3 = build_stage_templates(toy3, cfg)
    with pytest.raises(ReformulationError):
        kkt_single_level(s3, cfg)


def test_penalize_rejects_nonpositive(toy3):
    cfg = desk_cfg()
    inc, s1, s2, s3 = build_stage_templates(toy3, cfg)
    s3k = kkt_single_level(s3, cfg)
    with pytest.raises(ReformulationError):
        penalize_rcr(s2, s3k, 0.0, 10.0)


def test_penalized_stage2_feasible_for_wild_errors(toy3):
    """A forecast error beyond all ramping stays feasible through the slack."""
    cfg = desk_cfg()
    inc, s1, s2p, s3p = build_tractable(toy3, cfg)
    master = LinearBlock()
    master.merge(s1.block)
    g = toy3.vre[0]
    wild = np.array([g.s_max * 0.99 - g.p_fc])   # far above any ramp
    master.merge(stamp(s2p.block, eps=wild))
    sol = solve(master, kind="milp", handle=SolverHandle(mip_gap=1e-4))
    assert sol.optimal
    # slack semantics: moving availability needs |eps| minus ramp room
    assert sol.values["y2.s2.0"] >= 0.0


def test_slack_zero_on_feasible_instance(toy3):
    cfg = desk_cfg()
    inc, s1, s2p, s3p = build_tractable(toy3, cfg)
    amb = default_ambiguity(toy3, cfg)
    omega = enumerate_support(toy3.n_components, 1)
    d = dualize_dro(s2p, s3p, amb, omega, np.zeros(1), 0)
    master = assemble_extensive(s1, [d], [1.0])
    sol = solve(master, kind="milp", handle=SolverHandle(mip_gap=0.005))
    assert sol.optimal
    slacks = [v for k, v in sol.values.items() if k.startswith(("y2.", "y3."))]
    assert max(slacks) <= 1e-6


def test_dualize_matches_primal_worst_case(toy3):
    """Fixed upstream: the dualized block's optimum equals the primal moment
    LP over exact per-contingency recourse values."""
    cfg = desk_cfg()
    inc, s1, s2p, s3p = build_tractable(toy3, cfg)
    amb = default_ambiguity(toy3, cfg)
    omega = enumerate_support(toy3.n_components, 1)
    d = dualize_dro(s2p, s3p, amb, omega, np.zeros(1), 0)
    master = assemble_extensive(s1, [d], [1.0])
    sol = solve(master, kind="milp",
                handle=SolverHandle(mip_gap=1e-4)).require_optimal()
    ups = {}
    for nme in s3p.block.vars:
        st = stage_of(nme)
        if st == 1:
            ups[nme] = sol.values[nme]
        elif st == 2:
            ups[nme] = sol.values[f"{nme}@e0"]
    vals = {}
    for cv in omega:
        blk = stamp(substitute(s3p.block, ups), o=cv.as_array())
        vals[cv] = solve(blk, kind="milp",
                         handle=SolverHandle(mip_gap=1e-6)).require_optimal().objective
    _, expect, (lam, lamc) = worst_case_distribution(vals, amb)
    dro_val = sum(sol.values[nme] * c for nme, c in d.objective.items()
                  if nme.startswith(("dro.", "droc.")))
    assert dro_val == pytest.approx(expect, rel=2e-3, abs=1e-4)


def test_working_set_monotonicity(toy3):
    """Enlarging the working set never decreases the dualized optimum."""
    cfg = desk_cfg()
    inc, s1, s2p, s3p = build_tractable(toy3, cfg)
    amb = default_ambiguity(toy3, cfg)
    omega = enumerate_support(toy3.n_components, 1)
    vals = []
    for size in (len(omega) - 2, len(omega)):
        d = dualize_dro(s2p, s3p, amb, omega[:size], np.zeros(1), 0)
        master = assemble_extensive(s1, [d], [1.0])
        sol = solve(master, kind="milp",
                    handle=SolverHandle(mip_gap=1e-4)).require_optimal()
        vals.append(sol.objective)
    assert vals[1] >= vals[0] - 1e-3 * max(1.0, abs(vals[1]))


def test_extensive_degenerate_single_scenario(toy3):
    """One zero scenario and the no-contingency singleton collapse to the
    deterministic problem."""
    cfg = desk_cfg(k_max=0, k_b=0)
    inc, s1, s2p, s3p = build_tractable(toy3, cfg)
    amb = AmbiguitySet((0.0,) * toy3.n_components, (1.0,) * toy3.n_components)
    omega = [ContingencyVector.all_on(toy3.n_components)]
    d = dualize_dro(s2p, s3p, amb, omega, np.zeros(1), 0)
    master = assemble_extensive(s1, [d], [1.0])
    sol = solve(master, kind="milp",
                handle=SolverHandle(mip_gap=1e-5)).require_optimal()
    det = solve(s1.block, kind="milp",
                handle=SolverHandle(mip_gap=1e-5)).require_optimal()
    assert sol.objective == pytest.approx(det.objective, rel=1e-3)


def test_probability_validation(toy3):
    cfg = desk_cfg()
    inc, s1, s2p, s3p = build_tractable(toy3, cfg)
    amb = default_ambiguity(toy3, cfg)
    omega = enumerate_support(toy3.n_components, 1)
    d = dualize_dro(s2p, s3p, amb, omega, np.zeros(1), 0)
    with pytest.raises(ReformulationError, match="distribution"):
        assemble_extensive(s1, [d], [0.7])
    with pytest.raises(ReformulationError, match="nonempty"):
        dualize_dro(s2p, s3p, amb, [], np.zeros(1), 0)


def test_scope_rename():
    f = scope_rename(2, 5)
    assert f("pc.s1.1") == "pc.s1.1"
    assert f("pvmax.s2.1") == "pvmax.s2.1@e2"
    assert f("alp.s3ll.3") == "alp.s3ll.3@e2o5"
    assert f("pot.s3g.4") == "pot.s3g.4@e2o5"
    g = scope_rename(0)
    with pytest.raises(ReformulationError):
        g("zt.s3.1")
