"""Perception-robustness tradeoff laboratory for deterministic restoration estimators."""

from prtradeoff.errors import (
    ContractViolationError,
    InvalidParameterError,
    TooLargeError,
    TrainingDivergedError,
    UndefinedPosteriorError,
    VerificationFailure,
)
from prtradeoff.models import (
    DiscreteJointModel,
    EmpiricalJointSample,
    GaussianToyModel,
    discrete_model,
    discrete_posterior,
    gaussian_toy,
    posterior_params,
    sample_joint,
)

__version__ = "0.1.0"

__all__ = [
    "ContractViolationError",
    "DiscreteJointModel",
    "EmpiricalJointSample",
    "GaussianToyModel",
    "InvalidParameterError",
    "TooLargeError",
    "TrainingDivergedError",
    "UndefinedPosteriorError",
    "VerificationFailure",
    "discrete_model",
    "discrete_posterior",
    "gaussian_toy",
    "posterior_params",
    "sample_joint",
]
