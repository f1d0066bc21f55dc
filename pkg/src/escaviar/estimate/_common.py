"""Shared data preparation and the result container for both estimators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..model import InitPolicy, ModelSpec, ParamVector, RiskPath, in_region, _values

MIN_OBS = 250


@dataclass(frozen=True)
class FitData:
    r: np.ndarray
    x: np.ndarray
    q1: float
    x1: float
    nonneg: bool


@dataclass
class FitResult:
    """Outcome of an MLE or MCMC fit.

    ``var_next``/``es_next`` are the one-step forecasts; for MCMC they are
    posterior means over the retained draws and therefore differ slightly
    from ``risk_path.q_next``, which is evaluated at the posterior mean.
    """

    method: str
    spec: ModelSpec
    point: ParamVector
    log_lik: float
    risk_path: RiskPath
    var_next: float
    es_next: float
    draws: np.ndarray | None = None
    log_post: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def prepare(spec: ModelSpec, returns, driver, init: InitPolicy = InitPolicy(), min_obs: int = MIN_OBS) -> FitData:
    r = _values(returns)
    x = _values(driver)
    if r.shape != x.shape:
        raise ValidationError(f"returns ({r.size}) and driver ({x.size}) are not aligned")
    if r.size < min_obs:
        raise ValidationError(f"need at least {min_obs} observations, got {r.size}")
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(x))):
        raise ValidationError("returns and driver must be finite")
    q1, x1 = init.resolve(r, spec.alpha)
    return FitData(r, x, q1, x1, bool(np.all(x >= 0)))


def feasible(spec: ModelSpec, theta, data: FitData) -> bool:
    return in_region(spec.kind, theta, data.nonneg)
