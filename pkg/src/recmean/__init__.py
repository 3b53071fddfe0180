"""Marginal mean of recurrent events with a competing terminal event.

Weighted nonparametric maximum likelihood for semiparametric
transformation models of the marginal mean, with inverse probability of
censoring weights, sandwich variance estimation, marginal mean
prediction, AIC-based link selection, an exact simulation engine, and a
Monte Carlo study harness.
"""

__version__ = "0.1.0"

from .censoring import CensoringSurvival, WeightContext, ipc_weights, km_censoring, pseudo_risk_size
from .data import (
    DataError,
    Dataset,
    DiagnosticsReport,
    SubjectRecord,
    build_dataset,
    covariate_at,
    covariates_on_grid,
    diagnostics,
    make_subject,
    parse_dataset,
    serialize_dataset,
)
from .estimator import (
    ConvergenceError,
    FitResult,
    SolverOptions,
    fit_npmle,
    ghosh_lin_fit,
    initial_values,
    profile_jump_update,
)
from .likelihood import (
    Engine,
    LikelihoodData,
    LikelihoodError,
    ParamVector,
    build_likelihood_data,
    grad_loglik,
    hessian_loglik,
    loglik,
)
from .links import LinkFunction, eval_link, format_link, parse_link
from .marginal import (
    PredictionCurve,
    StepFunction,
    aalen_johansen_marginal_mean,
    nelson_aalen_pseudo,
    predict_marginal_mean,
)
from .mc import McRow, McSummary, mc_summary_to_csv, run_mc_study
from .simulation import (
    SimulationConfig,
    SimulationError,
    available_presets,
    gamma3_of,
    gompertz_cum,
    load_config,
    simulate_dataset,
    simulate_subject,
    subdist,
)
from .variance import (
    VarianceError,
    VarianceResult,
    eta_components,
    functional_covariance,
    functional_variance,
    kappa_components,
    sandwich,
)

__all__ = [
    "__version__",
    "CensoringSurvival",
    "ConvergenceError",
    "DataError",
    "Dataset",
    "DiagnosticsReport",
    "Engine",
    "FitResult",
    "LikelihoodData",
    "LikelihoodError",
    "LinkFunction",
    "McRow",
    "McSummary",
    "ParamVector",
    "PredictionCurve",
    "SimulationConfig",
    "SimulationError",
    "SolverOptions",
    "StepFunction",
    "SubjectRecord",
    "VarianceError",
    "VarianceResult",
    "WeightContext",
    "aalen_johansen_marginal_mean",
    "available_presets",
    "build_dataset",
    "build_likelihood_data",
    "covariate_at",
    "covariates_on_grid",
    "diagnostics",
    "eta_components",
    "eval_link",
    "fit_npmle",
    "format_link",
    "functional_covariance",
    "functional_variance",
    "gamma3_of",
    "ghosh_lin_fit",
    "gompertz_cum",
    "grad_loglik",
    "hessian_loglik",
    "initial_values",
    "ipc_weights",
    "kappa_components",
    "km_censoring",
    "load_config",
    "loglik",
    "make_subject",
    "mc_summary_to_csv",
    "nelson_aalen_pseudo",
    "parse_dataset",
    "parse_link",
    "predict_marginal_mean",
    "profile_jump_update",
    "pseudo_risk_size",
    "run_mc_study",
    "sandwich",
    "serialize_dataset",
    "simulate_dataset",
    "simulate_subject",
    "subdist",
]
