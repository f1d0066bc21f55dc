"""Start values for the quantile recursion from the pinball loss alone."""

from __future__ import annotations

import logging

import numpy as np
from scipy.optimize import minimize

from ..model import _qloss_kernel, _qloss_many, _values

logger = logging.getLogger(__name__)

DEFAULT_BETA2 = 0.9


def fallback_start(returns, alpha: float) -> np.ndarray:
    q = float(np.quantile(_values(returns), alpha))
    return np.array([q * (1.0 - DEFAULT_BETA2), -0.1, DEFAULT_BETA2])


def _beta_ok(beta, nonneg):
    return abs(beta[2]) < 1.0 and (not nonneg or beta[1] <= 0.0) and np.all(np.isfinite(beta))


def quantile_reg_init(returns, driver, alpha: float, n_candidates: int = 300, n_refine: int = 5,
                      maxiter: int = 500, rng=None, q1: float | None = None) -> np.ndarray:
    """Betas of ``Q_t = b0 + b1 X_{t-1} + b2 Q_{t-1}`` minimising the quantile loss.

    Random candidates are drawn so that the implied stationary level of the
    recursion matches the sample quantile; the best ``n_refine`` of them are
    polished with Nelder-Mead. Degenerate data (or a failed search) return
    :func:`fallback_start`.
    """
    r = _values(returns)
    x = _values(driver)
    rng = np.random.default_rng(rng)
    qbar = float(np.quantile(r, alpha))
    if np.ptp(r) == 0.0 or not np.isfinite(qbar):
        logger.info("degenerate returns, using fallback start")
        return fallback_start(r, alpha)
    if q1 is None:
        head = r[: max(50, int(np.ceil(0.1 * r.size)))]
        q1 = float(np.quantile(head, alpha))
    nonneg = bool(np.all(x >= 0))
    xbar = float(np.mean(x)) if abs(np.mean(x)) > 1e-12 else 1.0

    b2 = rng.uniform(0.5, 0.99, n_candidates)
    share = rng.uniform(0.0, 1.0, n_candidates)
    level = qbar * (1.0 - b2)
    cands = np.column_stack([share * level, (1.0 - share) * level / xbar, b2])
    if nonneg:
        cands[:, 1] = np.minimum(cands[:, 1], 0.0)
    cands = np.vstack([cands, fallback_start(r, alpha)])
    losses = _qloss_many(cands, r, x, q1, alpha)

    def objective(beta):
        if not _beta_ok(beta, nonneg):
            return np.inf
        return _qloss_kernel(beta, r, x, q1, alpha)

    best, best_loss = None, np.inf
    for i in np.argsort(losses)[:n_refine]:
        res = minimize(objective, cands[i], method="Nelder-Mead",
                       options={"maxiter": maxiter, "xatol": 1e-7, "fatol": 1e-9})
        if np.isfinite(res.fun) and res.fun < best_loss and _beta_ok(res.x, nonneg):
            best, best_loss = res.x, res.fun
    if best is None:
        logger.warning("quantile regression init failed, using fallback start")
        return fallback_start(r, alpha)
    return np.asarray(best, dtype=float)
