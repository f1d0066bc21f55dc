"""Model confidence set with the range (R) and semi-quadratic (SQ) statistics."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .._rng import seed_sequence
from ..errors import ValidationError

logger = logging.getLogger(__name__)

STATISTICS = ("R", "SQ")


@dataclass(frozen=True)
class McsResult:
    included: tuple
    eliminated: tuple
    pvalues: dict
    statistic: str
    confidence: float

    def as_dict(self) -> dict:
        return {"statistic": self.statistic, "confidence": self.confidence, "included": list(self.included),
                "eliminated": list(self.eliminated), "pvalues": {k: float(v) for k, v in self.pvalues.items()}}


def block_bootstrap_means(losses: np.ndarray, reps: int, block_len: int, rng) -> np.ndarray:
    """Column means of ``reps`` moving-block bootstrap resamples.

    Blocks of ``block_len`` consecutive rows start uniformly in
    ``[0, T - block_len]``; the last block is cut to make ``T`` rows.
    """
    T = losses.shape[0]
    b = min(block_len, T)
    n_full, rem = divmod(T, b)
    csum = np.vstack([np.zeros((1, losses.shape[1])), np.cumsum(losses, axis=0)])
    starts = rng.integers(0, T - b + 1, size=(reps, n_full + (rem > 0)))
    totals = np.zeros((reps, losses.shape[1]))
    for k in range(n_full):
        s = starts[:, k]
        totals += csum[s + b] - csum[s]
    if rem:
        s = starts[:, -1]
        totals += csum[s + rem] - csum[s]
    return totals / T


def _tstats(dbar, var):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = dbar / np.sqrt(var)
    t[(var <= 0) & (dbar == 0)] = 0.0
    return t


def mcs(losses, statistic: str = "R", confidence: float = 0.90, reps: int = 5000, block_len: int = 10,
        rng_seed=0, names=None) -> McsResult:
    """Iteratively eliminate models until equal predictive ability is not rejected.

    Parameters
    ----------
    losses : (T, m) array or mapping of name -> length-T array
        Per-period losses, lower is better.
    statistic : {"R", "SQ"}
        ``R = max |t_ij|``; ``SQ = sum_{i<j} t_ij^2`` over the current set,
        with ``t_ij`` the pairwise mean loss differential over its bootstrap
        standard error.

    The worst model is ``argmax_i max_j t_ij``. MCS p-values are the running
    maximum of the equivalence-test p-values at elimination.
    """
    statistic = statistic.upper()
    if statistic not in STATISTICS:
        raise ValidationError(f"statistic must be one of {STATISTICS}")
    if reps < 1000:
        raise ValidationError("MCS needs at least 1000 bootstrap replications")
    if not 0 < confidence < 1:
        raise ValidationError("confidence must lie in (0, 1)")
    if isinstance(losses, dict):
        names = list(losses)
        L = np.column_stack([np.asarray(losses[k], dtype=float) for k in names])
    else:
        L = np.asarray(losses, dtype=float)
        if L.ndim != 2:
            raise ValidationError("losses must be a (T, m) matrix")
        names = list(names) if names is not None else [f"model{i}" for i in range(L.shape[1])]
    if len(names) != L.shape[1]:
        raise ValidationError("names do not match the loss columns")
    if not np.all(np.isfinite(L)):
        raise ValidationError("losses must be finite")
    m = L.shape[1]
    if m < 2:
        return McsResult(tuple(names), (), {n: 1.0 for n in names}, statistic, confidence)
    if L.shape[0] < 2:
        raise ValidationError("need at least two periods of losses")

    rng = np.random.default_rng(seed_sequence(rng_seed))
    boot = block_bootstrap_means(L, reps, block_len, rng)
    lbar = L.mean(axis=0)
    dbar = lbar[:, None] - lbar[None, :]
    dboot = boot[:, :, None] - boot[:, None, :]
    var = np.mean((dboot - dbar) ** 2, axis=0)
    t_full = _tstats(dbar, var)
    with np.errstate(divide="ignore", invalid="ignore"):
        tboot = (dboot - dbar) / np.sqrt(var)
    tboot = np.nan_to_num(tboot, nan=0.0, posinf=0.0, neginf=0.0)

    alive = list(range(m))
    eliminated, pvals, running = [], {}, 0.0
    while len(alive) > 1:
        idx = np.array(alive)
        t = t_full[np.ix_(idx, idx)]
        tb = tboot[:, idx][:, :, idx]
        if statistic == "R":
            stat = np.max(np.abs(t))
            dist = np.max(np.abs(tb).reshape(reps, -1), axis=1)
        else:
            iu = np.triu_indices(idx.size, 1)
            stat = np.sum(t[iu] ** 2)
            dist = np.sum(tb[:, iu[0], iu[1]] ** 2, axis=1)
        p = float(np.mean(dist >= stat))
        running = max(running, p)
        if p >= 1 - confidence:
            break
        worst = idx[int(np.argmax(np.max(t, axis=1)))]
        pvals[names[worst]] = running
        eliminated.append(names[worst])
        alive.remove(worst)
    for i in alive:
        pvals[names[i]] = 1.0 if len(alive) == 1 else running
    included = tuple(names[i] for i in alive)
    return McsResult(included, tuple(eliminated), pvals, statistic, confidence)
