from .errors import (
    InvalidParameterError,
    NdclError,
    NumericalError,
    PlanError,
    StaleCacheError,
    TrainingError,
)
from .experiment_service import ExperimentService
from .mlp import Adam, MlpModel

__all__ = [
    "Adam",
    "ExperimentService",
    "InvalidParameterError",
    "MlpModel",
    "NdclError",
    "NumericalError",
    "PlanError",
    "StaleCacheError",
    "TrainingError",
]
