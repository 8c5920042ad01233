import numpy as np
import pytest

from tsdrots.cases import case2, case3par, case9mod
from tsdrots.network import (Branch, Bus, CaseError, ConvGen, GridCase, Load,
                             VreGen, build_incidence, case_edges,
                             connected_components, default_alpha,
                             is_uniquely_balanced, parse_case, serialize_case)


def test_case9_shape():
    c = case9mod()
    assert len(c.branches) == 14 and len(c.vre) == 2 and len(c.conv) == 1
    assert c.n_components == 17


def test_missing_bus_reference():
    text = serialize_case(case2()).replace("1 1 2 0.0 -5.0", "1 1 99 0.0 -5.0")
    with pytest.raises(CaseError, match="branch 1 references missing bus 99"):
        parse_case(text)


def test_nonconvex_cost_rejected():
    c = case2()
    bad = ConvGen(1, 1, 0.0, 2.0, -1.0, 1.0, 2.0, 2.0, 10.0, 2.0,
                  (0.0, 1.0, 2.0), (0.0, 20.0, 25.0))   # slopes 20 then 5
    with pytest.raises(CaseError, match="convex"):
        GridCase(buses=c.buses, branches=c.branches, conv=[bad],
                 loads=c.loads).validate()


def test_roundtrip_bit_exact():
    for case in (case2(), case3par(), case9mod()):
        assert parse_case(serialize_case(case)) == case


def test_sym_groups():
    groups = case3par().sym_groups()
    assert groups == [[0, 1]]
    assert case9mod().sym_groups() == []


def test_incidence_identities():
    for case in (case2(), case3par(), case9mod()):
        inc = build_incidence(case)
        assert np.array_equal(inc.E_pos + inc.E_neg, inc.E)
        assert np.array_equal(inc.E_pos - inc.E_neg, inc.E_abs)
        assert np.array_equal(inc.E_abs, np.abs(inc.E))
        for col in range(inc.E.shape[1]):
            vals = sorted(inc.E[:, col][inc.E[:, col] != 0.0])
            assert vals == [-1.0, 1.0]
        for m in (inc.E_c, inc.E_v, inc.E_d):
            assert all(np.count_nonzero(m[:, j]) == 1 for j in range(m.shape[1]))


def test_two_bus_column():
    inc = build_incidence(case2())
    assert inc.E[:, 0].tolist() == [1.0, -1.0]


def test_rank_equals_nodes_minus_components():
    for case in (case2(), case3par(), case9mod()):
        inc = build_incidence(case)
        cc = connected_components(case_edges(case), len(case.buses))
        assert np.linalg.matrix_rank(inc.E) == len(case.buses) - cc
    # disconnected synthetic case
    c = GridCase(buses=[Bus(1), Bus(2), Bus(3), Bus(4)],
                 branches=[Branch(1, 1, 2, 0.0, -1.0),
                           Branch(2, 3, 4, 0.0, -1.0)]).validate()
    inc = build_incidence(c)
    assert np.linalg.matrix_rank(inc.E) == 4 - 2


def test_must_on_and_nc_selectors():
    inc = build_incidence(case9mod())
    assert inc.on_branches == (0, 1, 2)
    assert inc.nc_branches == (0, 1, 2)


def test_default_alpha_uniquely_balanced():
    for n in (2, 3, 6, 9):
        assert is_uniquely_balanced(default_alpha(n))
    assert not is_uniquely_balanced([1.0, -1.0, 1.0, -1.0])
    assert not is_uniquely_balanced([1.0, 1.0])


def test_parse_errors():
    with pytest.raises(CaseError, match="unknown section"):
        parse_case("[nonsense]\n")
    with pytest.raises(CaseError, match="before any section"):
        parse_case("1 2 3\n")
    with pytest.raises(CaseError, match="unknown column"):
        parse_case("[bus]\nid v_min v_max wrong\n")
    with pytest.raises(CaseError, match="expected 3 fields"):
        parse_case("[bus]\nid v_min v_max\n1 0.9\n")


def test_load_shed_cap_validation():
    with pytest.raises(CaseError, match="shed_max exceeds"):
        GridCase(buses=[Bus(1)], branches=[],
                 loads=[Load(1, 1, p=1.0, q=0.0, w_shed=10.0, shed_max=2.0)]
                 ).validate()
