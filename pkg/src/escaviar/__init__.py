"""VaR and ES forecasting with ES-CAViaR and ES-CAViaR-X models."""

from .errors import (ConfigError, DomainError, EscaviarError, EstimationError, NumericalError, ParseError,
                     ScalingError, ValidationError)
from .model import InitPolicy, ModelSpec, ParamVector, RiskPath, al_log_likelihood, joint_score, quantile_loss, risk_path

__version__ = "0.1.0"
