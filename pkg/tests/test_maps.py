from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from quenchedcp.engine import LatticeSystem
from quenchedcp.maps import (
    BranchMap,
    BreakpointError,
    FamilyError,
    MapFamily,
    apply_map,
    derivative_along,
    image_mod1,
    iterate,
    parse_number,
    times_map,
    validate_family,
)


def test_doubling_is_valid(doubling):
    explicit = MapFamily((BranchMap.from_table([("0", "1/2", "2", "0"), ("1/2", "1", "2", "-1")]),))
    for fam in (doubling, explicit):
        rep = validate_family(fam)
        assert rep.ok and rep.d_min == 2 and rep.lebesgue_preserving


def test_slope_one_branch_is_invalid():
    fam = MapFamily((BranchMap.from_table([("0", "1", "1", "0")]),))
    rep = validate_family(fam)
    assert not rep.ok
    assert any("not expanding" in p and "branch 0" in p for p in rep.problems)
    with pytest.raises(FamilyError):
        rep.raise_if_invalid()


def test_tripling_is_valid():
    rep = validate_family(MapFamily((times_map(3),)))
    assert rep.ok and rep.d_min == 3 and rep.lebesgue_preserving and rep.branch_counts == (3,)


def test_slope2_map_fixing_half_is_valid(both_fix_half):
    rep = validate_family(both_fix_half)
    assert rep.ok and rep.d_min == 2 and rep.lebesgue_preserving


def test_non_full_branch_is_reported():
    fam = MapFamily((BranchMap.from_table([("0", "1/2", "3", "0"), ("1/2", "1", "2", "-1")]),))
    rep = validate_family(fam)
    assert not rep.ok
    assert any("full branch" in p for p in rep.problems)


def test_apply_map_examples(doubling):
    assert apply_map(doubling, 0, F(3, 10)) == F(3, 5)
    assert apply_map(MapFamily((times_map(3),)), 0, F(1, 2)) == F(1, 2)
    assert apply_map(doubling, 0, F(1, 6)) == F(1, 3)


def test_apply_map_breakpoint(doubling):
    with pytest.raises(BreakpointError):
        apply_map(doubling, 0, F(1, 2))
    assert image_mod1(doubling, 0, F(1, 2)) == (F(0), None)
    assert image_mod1(doubling, 0, F(1, 6)) == (F(1, 3), 2)


def test_iterate_examples(doubling, two_three):
    orbit = iterate(doubling, [0] * 6, F(1, 6), 6)
    assert orbit == [F(1, 6), F(1, 3), F(2, 3), F(1, 3), F(2, 3), F(1, 3), F(2, 3)]
    assert iterate(two_three, [], F(2, 7), 0) == [F(2, 7)]
    assert iterate(two_three, [1] * 10, F(1, 2), 10) == [F(1, 2)] * 11


def test_iterate_breakpoint_carries_step(two_three):
    # 1/18 -> 1/6 -> 1/2 under 3x, then 1/2 is a breakpoint of 2x
    with pytest.raises(BreakpointError) as err:
        iterate(two_three, [1, 1, 0], F(1, 18), 3)
    assert err.value.step == 2


@settings(max_examples=50, deadline=None)
@given(word=st.lists(st.integers(0, 1), min_size=1, max_size=30), p=st.integers(1, 10**6))
def test_iterate_has_prefix_property(two_three, word, p):
    x = F(p, 10**6 + 3)
    try:
        orbit = iterate(two_three, word, x, len(word))
    except BreakpointError:
        return
    assert iterate(two_three, word, x, len(word)) == orbit
    assert orbit[:-1] == iterate(two_three, word, x, len(word) - 1)
    assert apply_map(two_three, word[-1], orbit[-2]) == orbit[-1]


def test_derivative_examples(doubling, two_three):
    assert derivative_along(doubling, [0] * 5, F(1, 7), 5) == 32
    assert derivative_along(two_three, [0, 1], F(1, 7), 2) == 6
    assert derivative_along(two_three, [], F(1, 7), 0) == 1


@settings(max_examples=50, deadline=None)
@given(word=st.lists(st.integers(0, 1), min_size=0, max_size=20), p=st.integers(1, 999))
def test_derivative_at_least_d_min_power(both_fix_half, word, p):
    x = F(p, 1009)
    try:
        jac = derivative_along(both_fix_half, word, x, len(word))
    except BreakpointError:
        return
    assert jac >= validate_family(both_fix_half).d_min ** len(word)


def test_parse_number():
    assert parse_number("3/7") == F(3, 7)
    assert parse_number("1e-3") == F(1, 1000)
    assert parse_number(4) == F(4)
    assert isinstance(parse_number(0.25), float)


@pytest.mark.parametrize("family", ["doubling", "two_three", "both_fix_half"])
def test_pushforward_of_uniform_stays_uniform(family, request):
    fam = request.getfixturevalue(family)
    system = LatticeSystem(fam)
    rng = np.random.default_rng(2024)
    x = system.start_uniform(rng, 1_000_000)
    symbols = rng.integers(0, fam.u, size=50)
    for n in range(1, 51):
        x = system.step(x, int(symbols[n - 1]), rng)
        if n in (1, 10, 50):
            assert stats.kstest(system.to_float(x), "uniform").statistic <= 0.005
