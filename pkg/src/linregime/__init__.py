"""Optimal linear treatment regimes from observational data.

Estimates the value-maximizing linear regime with a doubly robust (AIPW)
value criterion, provides a normal-theory confidence interval for the
value, and percentile confidence intervals for the regime coefficients
via a reshaped-objective nonparametric bootstrap suited to the
coefficients' cube-root asymptotics.
"""

from .aipw import ValueEvaluator, ValueReport, pseudo_outcome, pseudo_outcomes, sigma2, value, value_ci
from .bootstrap import (
    BootstrapReport,
    HessianEstimate,
    bootstrap_draws,
    epsilon_sweep,
    hessian_fd,
    percentile_ci,
    quadratic_penalty,
    recommend_epsilon,
    reshape_objective,
    write_draws_csv,
)
from .data import (
    ColumnConfig,
    Dataset,
    OverlapReport,
    RegimeParameter,
    decide,
    decisions,
    load_csv,
    validate_overlap,
)
from .exceptions import (
    BootstrapError,
    ConvergenceError,
    DataError,
    LinregimeError,
    SearchError,
    SeparationError,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .nuisance import (
    EstimatorSpec,
    FittedFunction,
    NuisanceFit,
    fit_nuisance,
    fit_outcome_means,
    fit_propensity,
    oracle_nuisance,
)
from .search import SearchConfig, SearchResult, exhaustive_grid, maximize_on_sphere, search
from .simulate import (
    DgpSpec,
    McSummary,
    RateReport,
    format_coverage_table,
    generate,
    generate_full,
    oracle_functions,
    rate_diagnostic,
    run_coverage_study,
    true_value_oracle,
)

__version__ = "0.1.0"

__all__ = [
    "BootstrapError",
    "BootstrapReport",
    "ColumnConfig",
    "ConvergenceError",
    "DataError",
    "Dataset",
    "DgpSpec",
    "EstimatorSpec",
    "FittedFunction",
    "HessianEstimate",
    "KERNEL_BACKEND",
    "LinregimeError",
    "McSummary",
    "NuisanceFit",
    "OverlapReport",
    "RateReport",
    "RegimeParameter",
    "SearchConfig",
    "SearchError",
    "SearchResult",
    "SeparationError",
    "ValueEvaluator",
    "ValueReport",
    "bootstrap_draws",
    "decide",
    "decisions",
    "epsilon_sweep",
    "exhaustive_grid",
    "fit_nuisance",
    "fit_outcome_means",
    "fit_propensity",
    "format_coverage_table",
    "generate",
    "generate_full",
    "hessian_fd",
    "load_csv",
    "maximize_on_sphere",
    "oracle_functions",
    "oracle_nuisance",
    "percentile_ci",
    "pseudo_outcome",
    "pseudo_outcomes",
    "quadratic_penalty",
    "rate_diagnostic",
    "recommend_epsilon",
    "reshape_objective",
    "run_coverage_study",
    "search",
    "sigma2",
    "true_value_oracle",
    "validate_overlap",
    "value",
    "value_ci",
    "write_draws_csv",
]
