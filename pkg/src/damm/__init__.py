"""Dynamic adaptive mixture models.

Score-driven filtering and maximum-likelihood estimation of finite mixtures
with time-varying weights and component parameters.
"""

from .errors import DammError, DomainError, EstimationError, NumericError, SpecError, UnsupportedOperation
from .model import GasCoefficients, ModelSpec
from .score import FilterTrace, filter_pass, loglik

__version__ = "0.1.0"

__all__ = [
    "DammError",
    "DomainError",
    "EstimationError",
    "FilterTrace",
    "GasCoefficients",
    "ModelSpec",
    "NumericError",
    "SpecError",
    "UnsupportedOperation",
    "filter_pass",
    "loglik",
]
