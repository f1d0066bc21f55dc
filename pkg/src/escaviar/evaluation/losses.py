"""Loss totals per model and cross-model rank tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ..errors import ValidationError
from ..model import joint_score, quantile_loss_terms
from .backtests import ForecastSeries


@dataclass(frozen=True)
class LossSummary:
    models: tuple
    quantile_loss: np.ndarray
    joint_loss: np.ndarray
    quantile_rank: np.ndarray
    joint_rank: np.ndarray

    def as_dict(self) -> dict:
        return {m: {"quantile_loss": float(q), "joint_loss": float(j), "quantile_rank": float(qr), "joint_rank": float(jr)}
                for m, q, j, qr, jr in zip(self.models, self.quantile_loss, self.joint_loss,
                                           self.quantile_rank, self.joint_rank)}


def loss_frame(series: dict, alpha: float, kind: str = "joint") -> np.ndarray:
    """Per-period losses as a (T, m) matrix, the MCS input."""
    cols = []
    for s in series.values():
        if kind == "joint":
            cols.append(joint_score(s.returns, s.var, s.es, alpha))
        elif kind == "quantile":
            cols.append(quantile_loss_terms(s.returns, s.var, alpha))
        else:
            raise ValidationError("kind must be 'joint' or 'quantile'")
    return np.column_stack(cols)


def loss_summary(series: dict, alpha: float) -> LossSummary:
    """Totals of both losses and their ranks (1 = lowest) for one data series."""
    if not series:
        raise ValidationError("no models given")
    first = next(iter(series.values()))
    for name, s in series.items():
        if not isinstance(s, ForecastSeries):
            raise ValidationError(f"{name}: expected a ForecastSeries")
        if s.dates != first.dates:
            raise ValidationError(f"{name}: forecast dates are not aligned with the other models")
    q = loss_frame(series, alpha, "quantile").sum(axis=0)
    j = loss_frame(series, alpha, "joint").sum(axis=0)
    return LossSummary(tuple(series), q, j, rankdata(q), rankdata(j))


def mean_ranks(summaries) -> dict:
    """Average rank of each model over several series (models must match)."""
    summaries = list(summaries)
    models = summaries[0].models
    if any(s.models != models for s in summaries):
        raise ValidationError("summaries cover different model sets")
    q = np.mean([s.quantile_rank for s in summaries], axis=0)
    j = np.mean([s.joint_rank for s in summaries], axis=0)
    return {m: {"quantile": float(a), "joint": float(b)} for m, a, b in zip(models, q, j)}
