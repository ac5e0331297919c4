"""Mismatched universal hypothesis testing and rank-constrained feature extraction."""

from .distinguish import (
    certify_family,
    construct_indicator_basis,
    construct_kronecker_basis,
    construct_two_dim_basis,
    construct_two_dim_family,
    count_halfspace_subsets,
    f_epsilon_set,
    is_epsilon_distinguishable,
    is_epsilon_extremal,
    lower_bound,
    upper_bound,
)
from .features import (
    ObjectiveSpec,
    SvpConfig,
    SvpResult,
    extract_basis,
    gradient_h,
    lipschitz_constant,
    objective_h,
    svp_project,
    svp_solve,
)
from .mismatched import (
    FeatureBasis,
    MismatchedSolution,
    SolverConfig,
    in_exponential_family,
    loglik_basis,
    mismatched_divergence,
    mismatched_objective,
)
from .prob import (
    EmpiricalDistribution,
    RngSeed,
    as_distribution,
    empirical_from_samples,
    kl_divergence,
    normalize_from_logits,
    sample_iid,
    tilt,
)
from .universal import TestOutcome, TestSpec, VarianceReport, monte_carlo_variance, run_test

__version__ = "0.1.0"
