"""Multi-start maximum likelihood under the asymmetric Laplace density."""

from __future__ import annotations

import logging

import numpy as np
from scipy.optimize import minimize

from .._rng import spawn
from ..errors import EstimationError
from ..model import InitPolicy, ModelSpec, ParamVector, _loglik_kernel, _loglik_many, risk_path
from ._common import FitResult, feasible, prepare
from .qr_init import quantile_reg_init

logger = logging.getLogger(__name__)

# sampling boxes for the random gamma starts
GAMMA_BOX = {"ar": ((0.0, 1.0),) * 3, "exp": ((-5.0, 0.0),)}


def draw_gammas(kind: str, n: int, rng) -> np.ndarray:
    lo, hi = np.array(GAMMA_BOX[kind]).T
    return rng.uniform(lo, hi, size=(n, lo.size))


def negloglik(theta, spec: ModelSpec, data) -> float:
    if not feasible(spec, theta, data):
        return np.inf
    ll = _loglik_kernel(spec.code, theta, data.r, data.x, data.q1, data.x1, spec.alpha)
    return -ll if np.isfinite(ll) else np.inf


def mle_fit(
    spec: ModelSpec,
    returns,
    driver,
    n_starts: int = 2000,
    n_refine: int = 10,
    maxiter: int = 500,
    max_restarts: int = 5,
    rng_seed=None,
    start=None,
    init: InitPolicy = InitPolicy(),
) -> FitResult:
    """Maximise the AL log-likelihood from many random starts.

    The betas of every start come from :func:`quantile_reg_init`; gammas are
    drawn uniformly from :data:`GAMMA_BOX`. All starts are scored, and the
    ``n_refine`` best feasible ones are polished with Nelder-Mead (restarted
    at its own solution up to ``max_restarts`` times) and never moved to a
    worse point, so the optimum is at least as good as every start.
    A user ``start`` is added as an extra candidate; with ``n_starts=1`` it is
    the only one.
    """
    data = prepare(spec, returns, driver, init)
    qr_seed, gamma_seed = spawn(rng_seed, 2)

    cands = []
    if start is not None:
        cands.append(start.to_array() if isinstance(start, ParamVector) else np.asarray(start, dtype=float))
    n_random = n_starts - len(cands)
    if n_random > 0:
        beta = quantile_reg_init(data.r, data.x, spec.alpha, rng=np.random.default_rng(qr_seed), q1=data.q1)
        gammas = draw_gammas(spec.kind, n_random, np.random.default_rng(gamma_seed))
        cands.extend(np.concatenate([beta, g]) for g in gammas)
    cands = np.array(cands, dtype=float)
    if cands.shape[1] != spec.n_params:
        raise EstimationError(f"start has {cands.shape[1]} parameters, {spec.kind} model needs {spec.n_params}")

    ok = np.array([feasible(spec, c, data) for c in cands])
    ll = np.full(len(cands), -np.inf)
    if ok.any():
        ll[ok] = _loglik_many(spec.code, np.ascontiguousarray(cands[ok]), data.r, data.x, data.q1, data.x1, spec.alpha)
    finite = np.isfinite(ll)
    if not finite.any():
        raise EstimationError("all starting values are infeasible", {"n_starts": len(cands)})

    order = [i for i in np.argsort(-ll) if finite[i]][:n_refine]
    best_theta, best_nll, trace = None, np.inf, []
    for i in order:
        theta, val, nit = cands[i], -ll[i], 0
        # restart the simplex at its own solution until it stops improving
        for _ in range(max_restarts + 1):
            res = minimize(negloglik, theta, args=(spec, data), method="Nelder-Mead",
                           options={"maxiter": maxiter, "xatol": 1e-8, "fatol": 1e-9})
            nit += int(res.nit)
            if not res.fun < val:
                break
            gain = val - res.fun
            theta, val = res.x, res.fun
            if gain < 1e-7:
                break
        trace.append({"start": int(i), "start_loglik": float(ll[i]), "loglik": float(-val), "nit": nit})
        if val < best_nll:
            best_theta, best_nll = np.array(theta), val

    point = ParamVector.from_array(best_theta)
    path = risk_path(spec, point, data.r, data.x, InitPolicy(data.q1, data.x1))
    diagnostics = {"start_loglik": ll, "refine": trace, "n_feasible": int(finite.sum()), "q1": data.q1, "x1": data.x1}
    return FitResult("mle", spec, point, float(-best_nll), path, path.q_next, path.es_next, diagnostics=diagnostics)
