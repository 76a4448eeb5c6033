"""Averaged estimators of the average treatment effect with many covariates."""

from .averaging import (
    AveragedEstimate,
    average_available,
    average_estimates,
    conservative_variance,
    trimmed_average,
    wald_interval,
)
from .dataset import Dataset, load_csv, standardize_columns, write_csv
from .estimators import EstimatorOutput, EstimatorSettings, Method, estimate_ate, estimate_many
from .exceptions import AteError, DataError, EstimationError, SeparationError, SolverError
from .harness import decision_agreement, estimator_correlations, run_monte_carlo, summarize
from .simulation import ScenarioId, generate_scenario, sample_exchangeable_mvn, true_ate

__all__ = [
    "AteError",
    "AveragedEstimate",
    "DataError",
    "Dataset",
    "EstimationError",
    "EstimatorOutput",
    "EstimatorSettings",
    "Method",
    "ScenarioId",
    "SeparationError",
    "SolverError",
    "average_available",
    "average_estimates",
    "conservative_variance",
    "decision_agreement",
    "estimate_ate",
    "estimate_many",
    "estimator_correlations",
    "generate_scenario",
    "load_csv",
    "run_monte_carlo",
    "sample_exchangeable_mvn",
    "standardize_columns",
    "summarize",
    "true_ate",
    "trimmed_average",
    "wald_interval",
    "write_csv",
]
