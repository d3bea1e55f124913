import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quenchedcp.cpd import (
    CpdParams,
    MarkedSample,
    MultiplicityLaw,
    cpd_pmf_direct,
    cpd_pmf_recursive,
    poisson_multiplicity,
    polya_aeppli_multiplicity,
    sample_cpd,
    sample_cppp,
    total_variation,
)


def geometric_half():
    return MultiplicityLaw.geometric(0.5)


def test_zero_count_is_exp_minus_s():
    p = CpdParams(1.0, MultiplicityLaw.truncated([1.0]))
    assert cpd_pmf_direct(p, 0) == pytest.approx(0.3678794412, abs=1e-10)


def test_delta_one_collapses_to_poisson():
    p = CpdParams(1.0, poisson_multiplicity())
    for k in range(6):
        assert cpd_pmf_direct(p, k) == pytest.approx(math.exp(-1) / math.factorial(k), abs=1e-15)


def test_two_compositions_of_two():
    lam = geometric_half()
    expected = math.exp(-1) * (lam.prob(2) + 0.5 * lam.prob(1) ** 2)
    assert cpd_pmf_direct(CpdParams(1.0, lam), 2) == pytest.approx(expected, abs=1e-15)


def test_recursive_poisson_prefix():
    p = cpd_pmf_recursive(CpdParams(1.0, poisson_multiplicity()), 3)
    e = math.exp(-1)
    np.testing.assert_allclose(p, [e, e, e / 2, e / 6], atol=1e-15)


@pytest.mark.parametrize("s", [0.1, 1.0, 7.5])
def test_recursive_starts_at_exp_minus_s(s):
    assert cpd_pmf_recursive(CpdParams(s, geometric_half()), 0)[0] == pytest.approx(math.exp(-s), rel=1e-15)


def test_recursive_matches_direct_polya_aeppli():
    params = CpdParams(0.7, MultiplicityLaw.geometric(5 / 12))
    rec = cpd_pmf_recursive(params, 8)
    for n in range(9):
        assert abs(rec[n] - cpd_pmf_direct(params, n)) <= 1e-12


def test_direct_is_capped():
    with pytest.raises(ValueError):
        cpd_pmf_direct(CpdParams(1.0, poisson_multiplicity()), 26)


def test_invalid_mass_is_rejected():
    with pytest.raises(ValueError):
        MultiplicityLaw.truncated([0.5, 0.4])


def test_nonpositive_intensity_is_rejected():
    with pytest.raises(ValueError):
        CpdParams(0.0, poisson_multiplicity())


multiplicity_laws = st.one_of(
    st.just(poisson_multiplicity()),
    st.floats(0.0, 0.95).map(MultiplicityLaw.geometric),
    st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6).map(lambda w: MultiplicityLaw.truncated(
        [x / sum(w) for x in w])),
    st.tuples(st.floats(0.05, 0.9), st.floats(0.0, 0.9)).map(
        lambda a: MultiplicityLaw.geometric(a[1], head=[a[0]])),
)


@settings(max_examples=60, deadline=None)
@given(s=st.floats(0.05, 6.0), law=multiplicity_laws)
def test_recursion_equals_direct_enumeration(s, law):
    params = CpdParams(s, law)
    rec = cpd_pmf_recursive(params, 10)
    direct = np.array([cpd_pmf_direct(params, n) for n in range(11)])
    assert np.max(np.abs(rec - direct)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(s=st.floats(0.05, 5.0), law=multiplicity_laws)
def test_partial_sums_increase_to_one(s, law):
    p = cpd_pmf_recursive(CpdParams(s, law), 200)
    partial = np.cumsum(p)
    assert np.all(np.diff(partial) >= 0)
    assert partial[-1] <= 1 + 1e-12


@settings(max_examples=30, deadline=None)
@given(s=st.floats(0.05, 4.0), law=multiplicity_laws)
def test_mean_identity(s, law):
    params = CpdParams(s, law)
    n = 64
    p = cpd_pmf_recursive(params, n)
    while p.sum() < 1 - 1e-10:
        n *= 2
        p = cpd_pmf_recursive(params, n)
    assert abs(np.dot(np.arange(n + 1), p) - s * law.mean()) <= 1e-9 * max(1.0, s * law.mean())


@settings(max_examples=20, deadline=None)
@given(s=st.floats(0.05, 20.0))
def test_delta_one_matches_poisson_closed_form(s):
    p = cpd_pmf_recursive(CpdParams(s, poisson_multiplicity()), 30)
    closed = [math.exp(-s) * s**k / math.factorial(k) for k in range(31)]
    np.testing.assert_allclose(p, closed, rtol=1e-12, atol=1e-300)


def test_polya_aeppli_examples():
    law = polya_aeppli_multiplicity(2)
    np.testing.assert_allclose(law.head(6), [2.0**-l for l in range(1, 7)], atol=1e-15)
    assert polya_aeppli_multiplicity(12 / 5).prob(1) == pytest.approx(7 / 12, abs=1e-15)
    assert polya_aeppli_multiplicity(1e9).prob(1) == pytest.approx(1.0, abs=1e-8)
    assert polya_aeppli_multiplicity(math.inf).prob(1) == 1.0
    for bad in (1.0, 0.5, -2):
        with pytest.raises(ValueError):
            polya_aeppli_multiplicity(bad)


def test_geometric_law_moments():
    law = MultiplicityLaw.geometric(5 / 12)
    assert law.total_mass() == pytest.approx(1.0, abs=1e-15)
    assert law.mean() == pytest.approx(12 / 7, abs=1e-14)
    assert law.tail_kind == "geometric"


def test_matrix_geometric_tail():
    A = [[0.3, 0.1], [0.0, 0.2]]
    row, col = [0.2, 0.1], [0.5, 0.5]
    tail = np.array(row) @ np.linalg.solve(np.eye(2) - np.array(A), np.array(col))
    law = MultiplicityLaw((1 - tail,), row, A, col)
    assert law.tail_kind == "matrix_geometric"
    assert law.total_mass() == pytest.approx(1.0, abs=1e-14)
    brute = np.dot(np.arange(1, 400), law.head(399))
    assert law.mean() == pytest.approx(brute, abs=1e-12)


def test_total_variation_examples():
    p = cpd_pmf_recursive(CpdParams(1.3, geometric_half()), 20)
    assert total_variation(p, p) == 0.0
    assert total_variation([1.0], [0.0, 1.0]) == 1.0
    poisson = [math.exp(-1) / math.factorial(k) for k in range(21)]
    cpd = cpd_pmf_recursive(CpdParams(1.0, poisson_multiplicity()), 20)
    assert total_variation(poisson, cpd) <= 1e-12


def test_total_variation_lumps_tails():
    assert total_variation([0.5], [0.5]) == 0.0
    assert total_variation([0.5], [0.5, 0.5]) == pytest.approx(0.5)
    assert total_variation([0.5], [0.25]) == pytest.approx(0.25)


def test_sample_delta_one_is_the_poisson_draw():
    params = CpdParams(2.5, poisson_multiplicity())
    a = sample_cpd(params, np.random.default_rng(3), 1000)
    b = np.random.default_rng(3).poisson(2.5, 1000)
    np.testing.assert_array_equal(a, b)


def test_sample_mean_and_law():
    params = CpdParams(1.5, MultiplicityLaw.geometric(5 / 12))
    x = sample_cpd(params, np.random.default_rng(11), 1_000_000)
    se = x.std() / math.sqrt(x.size)
    assert abs(x.mean() - params.mean) <= 4 * se
    emp = np.bincount(x) / x.size
    assert total_variation(emp, cpd_pmf_recursive(params, 80)) <= 0.005


def test_sample_truncated_law():
    law = MultiplicityLaw.truncated([0.2, 0.3, 0.5])
    s = law.sample(np.random.default_rng(0), 200_000)
    freq = np.bincount(s, minlength=4)[1:] / s.size
    np.testing.assert_allclose(freq, [0.2, 0.3, 0.5], atol=0.005)


def test_cppp_total_matches_cpd():
    params = CpdParams(1.2, MultiplicityLaw.geometric(0.4))
    rng = np.random.default_rng(5)
    totals = np.array([sample_cppp(params, rng).total for _ in range(50_000)])
    assert total_variation(np.bincount(totals) / totals.size, cpd_pmf_recursive(params, 60)) <= 0.01


def test_cppp_independence_and_marginal():
    params = CpdParams(2.0, MultiplicityLaw.geometric(5 / 12))
    rng = np.random.default_rng(7)
    left, right, quarter = [], [], []
    for _ in range(100_000):
        m = sample_cppp(params, rng)
        left.append(m.count(0, 0.5))
        right.append(m.count(0.5, 1))
        quarter.append(m.count(0, 0.25))
    assert abs(np.corrcoef(left, right)[0, 1]) <= 0.01
    quarter = np.asarray(quarter)
    expected = cpd_pmf_recursive(CpdParams(0.5, params.multiplicity), 60)
    assert total_variation(np.bincount(quarter) / quarter.size, expected) <= 0.01


def test_marked_sample_validation():
    m = MarkedSample((0.1, 0.7), (2, 1))
    assert m.total == 3 and m.count(0, 0.5) == 2
    with pytest.raises(ValueError):
        MarkedSample((1.0,), (1,))
    with pytest.raises(ValueError):
        MarkedSample((0.2,), (0,))
