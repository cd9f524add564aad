"""Tail approximations for statistics of multinomial allocations.

Moment summaries and corrected normal tail approximations for
power-divergence statistics, cell-count statistics, collision totals
and unfilled-cell counts, together with exact and Monte Carlo oracles
to verify them.
"""

from .errors import (
    DegenerateVarianceError,
    EvaluationError,
    InputExhaustedError,
    ModelValidationError,
    UnsupportedCombinationError,
)
from .kernels import (
    Kernel,
    LevelDistribution,
    MomentSummary,
    chi_square_centered_fn,
    g_second_moment_aggregates,
    kernel_mean_fn,
    level_tau,
    moment_summary,
    parse_kernel_spec,
    statistic_value,
    tau_sparse_approx,
    unfilled_sparse_expansion,
)
from .model import (
    MultinomialModel,
    Regime,
    RegimeTag,
    build_model,
    classify_regime,
    explicit_model,
    model_from_spec,
    model_from_spec_json,
    model_spec_json,
    model_to_spec,
    perturbed_uniform_model,
    power_law_model,
    probs_from_csv,
    probs_to_csv,
    uniform_model,
)
from .oracle import (
    ExactDistribution,
    McEstimate,
    conditioned_poisson_log_pmf,
    conditioned_poisson_pmf,
    enumerate_distribution,
    exact_count_moments,
    mc_tail_estimate,
    multinomial_log_pmf,
    multinomial_pmf,
    nu_n_constant,
    sample_counts,
)
from .poisson import (
    CentralMomentTable,
    central_moment,
    central_moment_coeffs,
    expect_fn,
    expect_fn_forward_diff,
    log_poisson_pmf,
    poisson_pmf,
    raw_moment,
    raw_moment_coeffs,
)
from .tails import (
    CorrectionCoeffs,
    TailResult,
    ZoneInfo,
    correction_coeffs,
    log_tail_asymptote,
    tail_probability,
    zone_bound,
)

__version__ = "0.1.0"
