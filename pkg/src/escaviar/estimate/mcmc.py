"""Adaptive block random-walk Metropolis with the epoch method.

Burn-in runs in epochs. Within an epoch each block is updated by a random
walk whose proposal is a three-component Gaussian scale mixture,
``N(0, s * C_k * Sigma)`` with ``C = (1, 100, 0.01)`` picked uniformly, and the
scale ``s`` follows a log stochastic-approximation rule toward the optimal
acceptance rate for the block dimension. At the end of each epoch ``Sigma``
is replaced by the sample covariance of the retained draws. Epochs stop once
the mean absolute percentage change of the posterior standard deviations
falls below a threshold. A final epoch of independence Metropolis-Hastings,
centred on the last epoch's mean, supplies the posterior sample.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .._rng import spawn
from ..errors import EstimationError, ValidationError
from ..model import InitPolicy, ModelSpec, ParamVector, _forecast_many, _loglik_kernel, risk_path
from ._common import FitResult, feasible, prepare
from .mle import mle_fit

logger = logging.getLogger(__name__)


def target_rate(d: int) -> float:
    if d == 1:
        return 0.44
    return 0.35 if d <= 4 else 0.234


def tune_scale(current_scale: float, acceptance_rate: float, target_rate: float, iteration: int) -> float:
    """One Robbins-Monro step on ``log(scale)`` toward ``target_rate``."""
    if not (0.0 <= acceptance_rate <= 1.0 and 0.0 <= target_rate <= 1.0):
        raise ValidationError("rates must lie in [0, 1]")
    step = min(0.05, 1.0 / math.sqrt(max(iteration, 1)))
    return current_scale * math.exp(step * (acceptance_rate - target_rate))


@dataclass(frozen=True)
class McmcConfig:
    epoch_iters: int = 20000
    burn: int = 2000
    final_iters: int = 10000
    final_burn: int = 2000
    max_epochs: int = 6
    min_epochs: int = 2
    mapc_threshold: float = 0.10
    scale_factors: tuple = (1.0, 100.0, 0.01)
    weights: tuple = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        if self.burn >= self.epoch_iters or self.final_burn >= self.final_iters:
            raise ValidationError("burn-in must be shorter than the epoch")
        if not 1 <= self.min_epochs <= self.max_epochs:
            raise ValidationError("need 1 <= min_epochs <= max_epochs")
        if len(self.scale_factors) != len(self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValidationError("mixture weights must match factors and sum to 1")

    @classmethod
    def desk(cls) -> "McmcConfig":
        """Reduced run: two 5k burn-in epochs and a 5k final epoch."""
        return cls(epoch_iters=5000, burn=1000, final_iters=5000, final_burn=1000, max_epochs=2)


@dataclass(frozen=True)
class EpochReport:
    sd: np.ndarray
    mapc: float
    iterations: int
    burn: int
    acceptance: tuple


@dataclass
class ChainOutput:
    draws: np.ndarray
    log_post: np.ndarray
    epochs: list
    final_acceptance: tuple
    converged: bool
    diagnostics: dict = field(default_factory=dict)


class AdaptiveBlockMetropolis:
    """Generic sampler for a log density over a partitioned parameter vector.

    Parameters
    ----------
    log_target : callable
        Maps a parameter array to the unnormalised log density; ``-inf``
        outside the support.
    blocks : sequence of index sequences
        Disjoint, exhaustive partition of the parameter indices.
    """

    def __init__(self, log_target: Callable, blocks: Sequence[Sequence[int]], config: McmcConfig = McmcConfig(), rng=None):
        self.log_target = log_target
        self.blocks = [np.asarray(b, dtype=int) for b in blocks]
        flat = np.sort(np.concatenate(self.blocks))
        if not np.array_equal(flat, np.arange(flat.size)):
            raise ValidationError("blocks must partition the parameter indices")
        self.dim = flat.size
        self.config = config
        self.rng = np.random.default_rng(rng)
        self._factors = np.sqrt(np.asarray(config.scale_factors, dtype=float))
        self._log_w = np.log(np.asarray(config.weights, dtype=float))

    def _components(self, size):
        return self.rng.choice(len(self._factors), size=size, p=self.config.weights)

    def _epoch(self, theta, lp, chols, scales, n_iter):
        cfg = self.config
        nb = len(self.blocks)
        draws = np.empty((n_iter, self.dim))
        lps = np.empty(n_iter)
        comp = self._components((n_iter, nb))
        z = self.rng.standard_normal((n_iter, self.dim))
        logu = np.log(self.rng.random((n_iter, nb)))
        accepted = np.zeros(nb, dtype=int)
        targets = [target_rate(b.size) for b in self.blocks]
        for it in range(n_iter):
            for j, idx in enumerate(self.blocks):
                prop = theta.copy()
                prop[idx] += math.sqrt(scales[j]) * self._factors[comp[it, j]] * (chols[j] @ z[it, idx])
                lp_prop = self.log_target(prop)
                ok = logu[it, j] < lp_prop - lp
                if ok:
                    theta, lp = prop, lp_prop
                    accepted[j] += 1
                scales[j] = tune_scale(scales[j], float(ok), targets[j], it + 1)
            draws[it] = theta
            lps[it] = lp
        return theta, lp, draws, lps, accepted

    def _log_q(self, values, mean, chol):
        d = mean.size
        dev = np.linalg.solve(chol, values - mean)
        maha = dev @ dev
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        comps = [lw - 0.5 * (maha / c + d * math.log(2 * math.pi * c) + logdet)
                 for lw, c in zip(self._log_w, self.config.scale_factors)]
        return logsumexp(comps)

    def _final_epoch(self, theta, lp, mean, chols, n_iter):
        nb = len(self.blocks)
        draws = np.empty((n_iter, self.dim))
        lps = np.empty(n_iter)
        comp = self._components((n_iter, nb))
        z = self.rng.standard_normal((n_iter, self.dim))
        logu = np.log(self.rng.random((n_iter, nb)))
        accepted = np.zeros(nb, dtype=int)
        logq = [self._log_q(theta[idx], mean[idx], chols[j]) for j, idx in enumerate(self.blocks)]
        for it in range(n_iter):
            for j, idx in enumerate(self.blocks):
                prop = theta.copy()
                prop[idx] = mean[idx] + self._factors[comp[it, j]] * (chols[j] @ z[it, idx])
                lp_prop = self.log_target(prop)
                if not np.isfinite(lp_prop):
                    continue
                lq_prop = self._log_q(prop[idx], mean[idx], chols[j])
                if logu[it, j] < lp_prop - lp + logq[j] - lq_prop:
                    theta, lp = prop, lp_prop
                    logq[j] = lq_prop
                    accepted[j] += 1
            draws[it] = theta
            lps[it] = lp
        return draws, lps, accepted

    @staticmethod
    def _chol(cov):
        cov = np.atleast_2d(cov)
        jitter = 1e-12 * max(float(np.mean(np.diag(cov))), 1e-300)
        for _ in range(8):
            try:
                return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
            except np.linalg.LinAlgError:
                jitter *= 100.0
        raise EstimationError("proposal covariance is not positive definite")

    def run(self, theta0) -> ChainOutput:
        cfg = self.config
        theta = np.array(theta0, dtype=float)
        lp = self.log_target(theta)
        if not np.isfinite(lp):
            raise EstimationError("starting point has zero posterior density")
        chols = [np.sqrt(2.38 / math.sqrt(b.size)) * np.eye(b.size) for b in self.blocks]
        scales = [1.0] * len(self.blocks)
        epochs, prev_sd, converged, kept = [], None, False, None
        for e in range(cfg.max_epochs):
            theta, lp, draws, _, acc = self._epoch(theta, lp, chols, scales, cfg.epoch_iters)
            rates = tuple(acc / cfg.epoch_iters)
            if np.any(acc == 0):
                raise EstimationError(f"epoch {e + 1}: a block accepted no proposals",
                                      {"acceptance": rates, "epochs": epochs})
            kept = draws[cfg.burn:]
            sd = kept.std(axis=0, ddof=1)
            if prev_sd is None:
                mapc = math.nan
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    mapc = float(np.mean(np.abs(sd - prev_sd) / prev_sd))
            epochs.append(EpochReport(sd, mapc, cfg.epoch_iters, cfg.burn, rates))
            logger.debug("epoch %d: acceptance %s, MAPC %.4f", e + 1, rates, mapc)
            prev_sd = sd
            chols = [self._chol(np.cov(kept[:, idx], rowvar=False)) for idx in self.blocks]
            scales = [2.38 ** 2 / b.size for b in self.blocks]
            if e + 1 >= cfg.min_epochs and mapc < cfg.mapc_threshold:
                converged = True
                break
        if not converged and cfg.max_epochs > 1:
            logger.warning("MAPC still above %.2f after %d epochs", cfg.mapc_threshold, cfg.max_epochs)
        mean = kept.mean(axis=0)
        draws, lps, acc = self._final_epoch(theta, lp, mean, chols, cfg.final_iters)
        if np.any(acc == 0):
            raise EstimationError("final epoch: a block accepted no proposals",
                                  {"acceptance": tuple(acc / cfg.final_iters), "epochs": epochs})
        return ChainOutput(draws[cfg.final_burn:], lps[cfg.final_burn:], epochs,
                           tuple(acc / cfg.final_iters), converged)


def model_blocks(spec: ModelSpec):
    return [(0, 1, 2), tuple(range(3, spec.n_params))]


def mcmc_fit(
    spec: ModelSpec,
    returns,
    driver,
    config: McmcConfig = McmcConfig(),
    rng_seed=None,
    start=None,
    init: InitPolicy = InitPolicy(),
    start_starts: int = 500,
) -> FitResult:
    """Posterior sample under a flat prior on the admissible region.

    Unless ``start`` is given, the chain starts from a light multi-start
    MLE (``start_starts`` candidates, one simplex refinement). The point
    estimate is the posterior mean; the forecasts are posterior means of
    ``(Q_{n+1}, ES_{n+1})`` over the retained draws.
    """
    data = prepare(spec, returns, driver, init)
    start_seed, chain_seed = spawn(rng_seed, 2)
    fixed = InitPolicy(data.q1, data.x1)
    if start is None:
        start = mle_fit(spec, data.r, data.x, n_starts=start_starts, n_refine=1,
                        rng_seed=start_seed, init=fixed).point
    theta0 = start.to_array() if isinstance(start, ParamVector) else np.asarray(start, dtype=float)

    code, r, x, q1, x1, alpha = spec.code, data.r, data.x, data.q1, data.x1, spec.alpha

    def log_post(theta):
        if not feasible(spec, theta, data):
            return -math.inf
        return _loglik_kernel(code, theta, r, x, q1, x1, alpha)

    sampler = AdaptiveBlockMetropolis(log_post, model_blocks(spec), config, np.random.default_rng(chain_seed))
    chain = sampler.run(theta0)
    point = ParamVector.from_array(chain.draws.mean(axis=0))
    path = risk_path(spec, point, r, x, fixed)
    qn, en = _forecast_many(code, np.ascontiguousarray(chain.draws), r, x, q1, x1)
    diagnostics = {"epochs": chain.epochs, "final_acceptance": chain.final_acceptance,
                   "converged": chain.converged, "q1": q1, "x1": x1, "start": theta0}
    return FitResult("mcmc", spec, point, float(log_post(point.to_array())), path, float(qn.mean()),
                     float(en.mean()), chain.draws, chain.log_post, diagnostics)


def write_chain_csv(result: FitResult, path) -> None:
    """Retained draws, one column per parameter plus ``log_post``."""
    if result.draws is None:
        raise ValidationError("fit has no posterior draws (MLE?)")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(result.spec.param_names) + ["log_post"])
        for row, lp in zip(result.draws, result.log_post):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(lp))])
