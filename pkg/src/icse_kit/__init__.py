"""Inequality constrained shrinkage estimation toolkit.

Least-squares estimation under inequality/equality constraints, Kuhn-Tucker
analytics of the associated quadratic program, a data-driven shrinkage
combination of the unrestricted and restricted estimators, benchmark
estimators (James-Stein, Empirical Bayes), and Monte Carlo harnesses for the
limit law, the risk bound, and finite-sample comparisons.
"""

__version__ = "0.1.0"

from .exceptions import (  # noqa: F401
    CapacityError,
    ConfigError,
    CovarianceError,
    DataError,
    DegenerateWeightsError,
    IcseError,
    InfeasibleError,
    LossSpecError,
    NumericalError,
    RankError,
    ShapeError,
    StudyError,
)
from .model import (  # noqa: F401
    EstimationProblem,
    FitResult,
    LossSpec,
    build_linear_problem,
    evaluate_loss,
    loss_matrix,
)
from .qp import (  # noqa: F401
    KTSolution,
    LinearConstraints,
    QuadraticProblem,
    brute_force_qp,
    kt_residuals,
    solve_qp,
)
from .estimators import (  # noqa: F401
    ConstraintFunction,
    fit_equality_pattern,
    fit_restricted,
    fit_unrestricted,
    linear_constraints,
    localizing_estimate,
    sign_and_zero_constraints,
    sign_restrictions,
)
from .orthant import OrthantQuery, all_pattern_probabilities, region_probability  # noqa: F401
from .shrinkage import (  # noqa: F401
    BindingPattern,
    OrthantConfig,
    PatternStats,
    ShrinkageResult,
    enumerate_patterns,
    feasible_tau,
    fit_icse,
    gamma_weights,
    kt_distribution,
    pattern_A_stats,
    projection_matrix,
    shrinkage_weight,
)
from .comparators import (  # noqa: F401
    EBConfig,
    EBPosterior,
    eb_fit,
    eb_log_marginal,
    james_stein,
    truncated_mvn_mean,
)
from .asymptotics import (  # noqa: F401
    DominanceReport,
    LimitConfig,
    LimitDraws,
    closed_form_2d,
    dominance_check,
    draw_limit,
    estimate_risk,
    optimal_tau,
    risk_bound,
    steins_identity_check,
    summarize_patterns,
)
from .mc_study import MCConfig, MCResult, emit_tables, generate_dgp, run_study  # noqa: F401
