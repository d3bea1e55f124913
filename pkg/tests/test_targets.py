from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_alpha
from quenchedcp.cpd import MultiplicityLaw, polya_aeppli_multiplicity
from quenchedcp.noise import NoiseModel
from quenchedcp.targets import (
    TargetSpec,
    UncertifiedError,
    alpha_from_theory,
    classify_target,
    lambda_from_alpha,
    mean_cluster_identity_check,
    minimal_period,
    return_structure,
    target_problems,
    verify_M_Gamma,
)

HALF = F(1, 2)
MARKOV = NoiseModel.markov([["7/10", "3/10"], ["3/10", "7/10"]])


def test_minimal_period_examples(periodic2, two_three, target_half, target_sixth):
    assert minimal_period(periodic2, target_half, [0] * 5) == 1
    assert minimal_period(two_three, target_sixth, [0, 1] * 40, horizon=64) is None
    assert minimal_period(two_three, target_half, [1, 0, 0, 1]) == 1


def test_return_structure_fixed_family(both_fix_half, target_half):
    rs = return_structure(both_fix_half, target_half, [0, 1, 1, 0, 1, 0, 0, 0], ell_max=6)
    assert rs.periods == (1,) * 6 and rs.K >= 6 and rs.saturated
    assert rs.cumulative == tuple(range(7))
    assert rs.jacobians[:4] == (1, 2, 6, 18)


def test_return_structure_hybrid_leading_ones(two_three, target_half):
    rs = return_structure(two_three, target_half, [1, 1, 1, 0, 1, 1, 1, 1], ell_max=8, horizon=64)
    assert rs.periods == (1, 1, 1) and rs.K == 3
    assert not rs.truncated


def test_return_structure_aperiodic(two_three, target_sixth):
    rs = return_structure(two_three, target_sixth, [0, 1, 1, 0] * 20, ell_max=5, horizon=64)
    assert rs.K == 0 and rs.periods == ()


@settings(max_examples=60, deadline=None)
@given(word=st.lists(st.integers(0, 1), min_size=20, max_size=40))
def test_return_structure_is_shift_consistent(word):
    from conftest import slope2_fixing_half
    from quenchedcp.maps import MapFamily, times_map

    fam = MapFamily((slope2_fixing_half(), times_map(3)))
    target = TargetSpec(HALF, F(1, 5))
    rs = return_structure(fam, target, word, ell_max=4, horizon=len(word))
    if rs.K < 2:
        return
    m0 = rs.periods[0]
    shifted = return_structure(fam, target, word[m0:], ell_max=3, horizon=len(word))
    assert shifted.periods == rs.periods[1:4]


def test_verify_m_gamma_examples(both_fix_half, two_three, target_half, target_sixth):
    cert = verify_M_Gamma(both_fix_half, target_half)
    assert cert.bounded and cert.m_gamma == 1
    cert = verify_M_Gamma(two_three, target_sixth)
    assert cert.bounded and cert.m_gamma == 0 and cert.closure_size == 4
    cert = verify_M_Gamma(two_three, target_half)
    assert cert.bounded and cert.m_gamma == 1


def test_unbounded_periods_give_counterexample(both_fix_half):
    target = TargetSpec(HALF, F(1, 5))
    cert = verify_M_Gamma(both_fix_half, target, period_bound=64)
    assert cert.certified and not cert.bounded and cert.m_gamma == float("inf")
    w = cert.counterexample.symbols
    assert minimal_period(both_fix_half, target, w, horizon=len(w)) > 64
    assert classify_target(both_fix_half, target, cert).kind == "uncertified"
    with pytest.raises(UncertifiedError):
        alpha_from_theory(both_fix_half, target, MARKOV, ell_max=4, cert=cert)


def test_classification(both_fix_half, two_three, periodic2, target_half, target_sixth):
    def kind(fam, tgt):
        return str(classify_target(fam, tgt, verify_M_Gamma(fam, tgt)))

    assert kind(both_fix_half, target_half) == "pure_periodic(1)"
    assert kind(periodic2, target_half) == "pure_periodic(1)"
    assert kind(two_three, target_sixth) == "pure_aperiodic"
    assert kind(two_three, target_half) == "hybrid"


def test_boundary_targets(two_three, target_half, target_sixth):
    assert target_problems(two_three, target_sixth) == []
    assert len(target_problems(two_three, target_half)) == 2
    assert target_problems(two_three, target_half, allow_boundary=True) == []


def test_alpha_polya_aeppli(both_fix_half, target_half, fair):
    res = alpha_from_theory(both_fix_half, target_half, fair, ell_max=10)
    D = F(12, 5)
    assert list(res.alpha) == [(D - 1) * D**-l for l in range(1, 11)]
    assert res.extremal_index == F(7, 12)
    assert list(res.lam) == [(1 - 1 / D) * (1 / D) ** (l - 1) for l in range(1, 11)]
    law = res.multiplicity()
    assert law.ratio == pytest.approx(5 / 12, abs=1e-15)
    np.testing.assert_allclose(law.head(30), polya_aeppli_multiplicity(12 / 5).head(30), atol=1e-15)


def test_alpha_poisson(two_three, target_sixth, fair):
    res = alpha_from_theory(two_three, target_sixth, fair, ell_max=6)
    assert list(res.alpha) == [1, 0, 0, 0, 0, 0]
    assert list(res.lam) == [1, 0, 0, 0, 0, 0]


def test_alpha_hybrid(two_three, target_half, fair):
    res = alpha_from_theory(two_three, target_half, fair, ell_max=10)
    assert list(res.alpha) == [5 * F(6) ** -l for l in range(1, 11)]


def test_alpha_deterministic_slope2(periodic2, target_half):
    res = alpha_from_theory(periodic2, target_half, NoiseModel.bernoulli([1]), ell_max=10)
    assert list(res.alpha) == [F(1, 2**l) for l in range(1, 11)]
    # 1 - 1/J at the period: the Jacobian at the target is 2
    assert res.extremal_index == 1 - F(1, 2)


@pytest.mark.parametrize("case", ["pa", "poisson", "hybrid", "periodic2", "markov"])
def test_exact_matches_brute_force(case, both_fix_half, two_three, periodic2, target_half, target_sixth, fair):
    fam, tgt, noise = {
        "pa": (both_fix_half, target_half, fair),
        "poisson": (two_three, target_sixth, fair),
        "hybrid": (two_three, target_half, fair),
        "periodic2": (periodic2, target_half, NoiseModel.bernoulli([1])),
        "markov": (both_fix_half, target_half, MARKOV),
    }[case]
    res = alpha_from_theory(fam, tgt, noise, ell_max=5)
    assert list(res.alpha) == brute_force_alpha(fam, tgt, noise, 5, 8)


def test_chain_matches_enumeration(both_fix_half, two_three, target_half, fair):
    for fam, noise in ((both_fix_half, fair), (both_fix_half, MARKOV), (two_three, fair)):
        a = alpha_from_theory(fam, target_half, noise, ell_max=8, method="exact")
        b = alpha_from_theory(fam, target_half, noise, ell_max=8, method="chain")
        assert a.alpha == b.alpha and a.tail_mass == b.tail_mass


def test_markov_noise_is_not_polya_aeppli(both_fix_half, target_half):
    res = alpha_from_theory(both_fix_half, target_half, MARKOV, ell_max=8)
    assert res.extremal_index == F(7, 12)
    ratios = [res.alpha[i + 1] / res.alpha[i] for i in range(3)]
    assert len(set(ratios)) > 1
    assert res.multiplicity().tail_kind == "matrix_geometric"


@pytest.mark.parametrize("case", ["pa", "poisson", "hybrid", "markov"])
def test_monte_carlo_within_four_se(case, both_fix_half, two_three, target_half, target_sixth, fair):
    fam, tgt, noise = {
        "pa": (both_fix_half, target_half, fair),
        "poisson": (two_three, target_sixth, fair),
        "hybrid": (two_three, target_half, fair),
        "markov": (both_fix_half, target_half, MARKOV),
    }[case]
    exact = alpha_from_theory(fam, tgt, noise, ell_max=4)
    mc = alpha_from_theory(fam, tgt, noise, ell_max=4, method="monte_carlo", samples=4000,
                           rng=np.random.default_rng(17))
    for e, m, se in zip(exact.alpha, mc.alpha, mc.stderr):
        assert abs(float(e) - m) <= 4 * se + 1e-12


def test_certified_systems_satisfy_identities(both_fix_half, two_three, periodic2, target_half, target_sixth, fair):
    cases = [(both_fix_half, target_half, fair), (two_three, target_sixth, fair), (two_three, target_half, fair),
             (periodic2, target_half, NoiseModel.bernoulli([1])), (both_fix_half, target_half, MARKOV)]
    for fam, tgt, noise in cases:
        res = alpha_from_theory(fam, tgt, noise, ell_max=10)
        law = res.multiplicity()
        d_min = fam.d_min
        assert res.extremal_index >= 1 - 1 / F(d_min)
        assert abs(sum(res.alpha) - 1) <= res.tail_bound
        assert all(x >= 0 for x in res.lam)
        assert abs(law.total_mass() - 1) <= 1e-10
        assert mean_cluster_identity_check(res.alpha, law) <= 1e-10


def test_lambda_from_alpha_examples():
    alpha = [F(1, 2**l) for l in range(1, 12)]
    assert lambda_from_alpha(alpha) == alpha[:-1]
    assert lambda_from_alpha([1, 0, 0, 0]) == [1, 0, 0]
    D = F(7, 3)
    alpha = [(D - 1) * D**-l for l in range(1, 9)]
    assert lambda_from_alpha(alpha) == [(1 - 1 / D) * (1 / D) ** (l - 1) for l in range(1, 8)]
    with pytest.raises(ValueError):
        lambda_from_alpha([0, 0])


def test_mean_cluster_identity_examples():
    alpha = [0.5 ** l for l in range(1, 30)]
    assert mean_cluster_identity_check(alpha, MultiplicityLaw.geometric(0.5)) == pytest.approx(0, abs=1e-15)
    assert mean_cluster_identity_check([1.0, 0.0], [1.0]) == 0
    hybrid = [5 * 6.0**-l for l in range(1, 12)]
    law = MultiplicityLaw.geometric(1 / 6)
    assert mean_cluster_identity_check(hybrid, law) <= 1e-12
