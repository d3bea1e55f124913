"""Quenched compound-Poisson hitting statistics for random piecewise expanding interval maps."""

from .cpd import (
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
from .maps import BranchMap, MapFamily, apply_map, derivative_along, iterate, times_map, validate_family
from .noise import NoiseModel, Word, enumerate_words, sample_word
from .targets import (
    TargetSpec,
    alpha_from_theory,
    classify_target,
    lambda_from_alpha,
    mean_cluster_identity_check,
    minimal_period,
    return_structure,
    verify_M_Gamma,
)

__version__ = "0.1.0"
