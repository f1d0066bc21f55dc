"""Violation-based VaR backtests and the forecast container they consume."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from datetime import date

import numpy as np
from scipy import optimize, sparse, stats
from scipy.special import xlogy

from .._jit import njit
from .._rng import seed_sequence, spawn
from ..errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

LEVEL = 0.05


@dataclass(frozen=True)
class ForecastRecord:
    date: date
    var_forecast: float
    es_forecast: float
    realized_return: float


@dataclass(frozen=True)
class ForecastSeries:
    """Aligned arrays of one model's one-step forecasts and outcomes."""

    dates: tuple
    returns: np.ndarray
    var: np.ndarray
    es: np.ndarray

    def __post_init__(self):
        for name in ("returns", "var", "es"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "dates", tuple(self.dates))
        n = len(self.dates)
        if not (self.returns.size == self.var.size == self.es.size == n):
            raise ValidationError("forecast arrays differ in length")
        if np.any(self.es > self.var):
            warnings.warn("some ES forecasts lie above the VaR forecast", RuntimeWarning, stacklevel=3)

    def __len__(self):
        return self.returns.size

    @classmethod
    def from_records(cls, records) -> "ForecastSeries":
        records = list(records)
        return cls(tuple(r.date for r in records), [r.realized_return for r in records],
                   [r.var_forecast for r in records], [r.es_forecast for r in records])

    def records(self):
        return [ForecastRecord(d, float(v), float(e), float(r))
                for d, v, e, r in zip(self.dates, self.var, self.es, self.returns)]


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    df: int
    method: str = "chi2"
    level: float = LEVEL

    @property
    def rejected(self) -> bool:
        return bool(np.isfinite(self.p_value) and self.p_value < self.level)

    @property
    def skipped(self) -> bool:
        return not np.isfinite(self.statistic)

    def as_dict(self) -> dict:
        return {"statistic": _json_float(self.statistic), "p_value": _json_float(self.p_value),
                "rejected": self.rejected, "df": self.df, "method": self.method}


def _json_float(v):
    return float(v) if np.isfinite(v) else None


def _series(records) -> ForecastSeries:
    if isinstance(records, ForecastSeries):
        return records
    return ForecastSeries.from_records(records)


def hits(returns, var) -> np.ndarray:
    """Violation indicator with the strict convention ``r_t < VaR_t``."""
    return np.asarray(returns, dtype=float) < np.asarray(var, dtype=float)


def vrate(records) -> float:
    s = _series(records)
    if len(s) < 1:
        raise ValidationError("need at least one forecast")
    return float(np.mean(hits(s.returns, s.var)))


def esrate(records) -> float:
    s = _series(records)
    if len(s) < 1:
        raise ValidationError("need at least one forecast")
    return float(np.mean(s.returns < s.es))


def _uc_stat(x, n, alpha):
    p = x / n
    return -2.0 * (xlogy(x, alpha) + xlogy(n - x, 1 - alpha) - xlogy(x, p) - xlogy(n - x, 1 - p))


def kupiec_uc(violations: int, n: int, alpha: float) -> TestResult:
    """Kupiec proportion-of-failures likelihood ratio, chi-square(1)."""
    if not 0 <= violations <= n or n < 1:
        raise ValidationError("need 0 <= violations <= n and n >= 1")
    lr = max(float(_uc_stat(violations, n, alpha)), 0.0)
    return TestResult(lr, float(stats.chi2.sf(lr, 1)), 1)


def christoffersen_cc(hit_sequence, alpha: float) -> TestResult:
    """Conditional coverage: Kupiec LR plus the first-order Markov independence LR."""
    h = np.asarray(hit_sequence).astype(bool)
    if h.size < 2:
        raise ValidationError("need at least two hits")
    lr_uc = float(_uc_stat(int(h.sum()), h.size, alpha))
    prev, cur = h[:-1], h[1:]
    n00 = np.sum(~prev & ~cur)
    n01 = np.sum(~prev & cur)
    n10 = np.sum(prev & ~cur)
    n11 = np.sum(prev & cur)
    if n01 + n11 == 0 or n00 + n10 == 0:
        if not h.any():
            logger.info("no violations: independence component set to 0")
        lr_ind = 0.0
    else:
        p01 = n01 / max(n00 + n01, 1)
        p11 = n11 / max(n10 + n11, 1)
        p = (n01 + n11) / (n00 + n01 + n10 + n11)
        l1 = xlogy(n00, 1 - p01) + xlogy(n01, p01) + xlogy(n10, 1 - p11) + xlogy(n11, p11)
        l0 = xlogy(n00 + n10, 1 - p) + xlogy(n01 + n11, p)
        lr_ind = max(2.0 * float(l1 - l0), 0.0)
    lr = max(lr_uc, 0.0) + lr_ind
    return TestResult(lr, float(stats.chi2.sf(lr, 2)), 2)


@njit(cache=True)
def _dq_stat(hit, var, lags, alpha):
    n = hit.shape[0]
    k = lags + 2
    xtx = np.zeros((k, k))
    xty = np.zeros(k)
    row = np.empty(k)
    for t in range(lags, n):
        row[0] = 1.0
        for j in range(1, lags + 1):
            row[j] = hit[t - j] - alpha
        row[k - 1] = var[t]
        y = hit[t] - alpha
        for a in range(k):
            xty[a] += row[a] * y
            for b in range(a, k):
                xtx[a, b] += row[a] * row[b]
    for a in range(k):
        for b in range(a):
            xtx[a, b] = xtx[b, a]
    beta = np.linalg.lstsq(xtx, xty)[0]
    return np.dot(xty, beta) / (alpha * (1.0 - alpha))


@njit(cache=True)
def _dq_stat_sparse(pos, count, var, lags, alpha):
    """Same statistic as :func:`_dq_stat`, built from hit positions only."""
    n = var.shape[0]
    k = lags + 2
    m = n - lags
    vsum = 0.0
    for t in range(lags, n):
        vsum += var[t]
    # raw sums over rows t = lags..n-1 of I_{t-j}, I_{t-j} I_{t-l}, I_{t-j} v_t
    s1 = np.zeros(lags + 1)
    s2 = np.zeros((lags + 1, lags + 1))
    sv = np.zeros(lags + 1)
    for a in range(count):
        p = pos[a]
        for j in range(lags + 1):
            t = p + j
            if lags <= t < n:
                s1[j] += 1.0
                sv[j] += var[t]
        for b in range(a + 1, count):
            gap = pos[b] - p
            if gap > lags:
                break
            # I_{t-j} I_{t-l} = 1 with t - l = p, t - j = pos[b]  (l = j + gap)
            for j in range(lags + 1 - gap):
                t = pos[b] + j
                if lags <= t < n:
                    s2[j, j + gap] += 1.0
    for j in range(lags + 1):
        s2[j, j] = s1[j]
        for l in range(j):
            s2[j, l] = s2[l, j]
    xtx = np.zeros((k, k))
    xty = np.zeros(k)
    a2m = alpha * alpha * m
    xtx[0, 0] = m
    xtx[0, k - 1] = vsum
    vv = 0.0
    for t in range(lags, n):
        vv += var[t] * var[t]
    xtx[k - 1, k - 1] = vv
    for j in range(1, lags + 1):
        xtx[0, j] = s1[j] - alpha * m
        xtx[j, k - 1] = sv[j] - alpha * vsum
        for l in range(j, lags + 1):
            xtx[j, l] = s2[j, l] - alpha * (s1[j] + s1[l]) + a2m
    for a in range(k):
        for b in range(a):
            xtx[a, b] = xtx[b, a]
    xty[0] = s1[0] - alpha * m
    for j in range(1, lags + 1):
        xty[j] = s2[0, j] - alpha * (s1[0] + s1[j]) + a2m
    xty[k - 1] = sv[0] - alpha * vsum
    beta = np.linalg.lstsq(xtx, xty)[0]
    return np.dot(xty, beta) / (alpha * (1.0 - alpha))


@njit(cache=True)
def _dq_stat_positions(positions, counts, var, lags, alpha):
    out = np.empty(positions.shape[0])
    for i in range(positions.shape[0]):
        out[i] = _dq_stat_sparse(positions[i], counts[i], var, lags, alpha)
    return out


def _bernoulli_positions(rng, m, n, alpha):
    """Hit positions of ``m`` iid Bernoulli(alpha) sequences via geometric gaps."""
    width = int(n * alpha + 10 * math.sqrt(n * alpha) + 20)
    while True:
        pos = np.cumsum(rng.geometric(alpha, size=(m, width)), axis=1) - 1
        if np.all(pos[:, -1] >= n):
            break
        width *= 2
    counts = np.sum(pos < n, axis=1)
    return np.ascontiguousarray(pos, dtype=np.int64), counts.astype(np.int64)


def _dq_design(h, var, lags, alpha):
    hc = h - alpha
    cols = [np.ones(h.size - lags)] + [hc[lags - j: h.size - j] for j in range(1, lags + 1)] + [var[lags:]]
    return np.column_stack(cols)


def dq_test(records, lags: int, alpha: float, method: str = "simulated", n_sim: int = 999,
            rng_seed=0, chunk: int = 250) -> TestResult:
    """Dynamic quantile test on demeaned hits.

    The centred hit ``I(r_t < VaR_t) - alpha`` is regressed on an intercept,
    ``lags`` of itself and ``VaR_t``; the statistic is
    ``b' X'X b / (alpha (1 - alpha))``. ``method="chi2"`` uses the asymptotic
    chi-square(lags + 2) reference; the default ``"simulated"`` conditions on
    the observed VaR path and simulates iid Bernoulli(alpha) hit sequences,
    giving a Monte Carlo p-value that is exact in finite samples. A singular
    design (e.g. no violations) skips the test with NaN values.
    """
    s = _series(records)
    n = len(s)
    if n <= lags + 10:
        raise ValidationError(f"DQ test needs more than {lags + 10} forecasts, got {n}")
    if method not in ("simulated", "chi2"):
        raise ValidationError("method must be 'simulated' or 'chi2'")
    h = hits(s.returns, s.var).astype(float)
    X = _dq_design(h, s.var, lags, alpha)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        logger.warning("DQ%d design is singular, test skipped", lags)
        return TestResult(math.nan, math.nan, lags + 2, f"{method} (skipped: singular design)")
    var = np.ascontiguousarray(s.var)
    stat = float(_dq_stat(h, var, lags, alpha))
    if method == "chi2":
        return TestResult(stat, float(stats.chi2.sf(stat, lags + 2)), lags + 2, "chi2")
    rng = np.random.default_rng(seed_sequence(rng_seed))
    exceed, done = 0, 0
    while done < n_sim:
        m = min(chunk, n_sim - done)
        pos, counts = _bernoulli_positions(rng, m, n, alpha)
        exceed += int(np.sum(_dq_stat_positions(pos, counts, var, lags, alpha) >= stat - 1e-9 * abs(stat)))
        done += m
    return TestResult(stat, (1 + exceed) / (n_sim + 1), lags + 2, "simulated")


def hall_sheather(n: int, tau: float, level: float = 0.05) -> float:
    z = stats.norm.ppf(1 - level / 2)
    x0 = stats.norm.ppf(tau)
    f0 = stats.norm.pdf(x0)
    return n ** (-1 / 3) * z ** (2 / 3) * (1.5 * f0 ** 2 / (2 * x0 ** 2 + 1)) ** (1 / 3)


def quantile_regression(y, X, tau: float) -> np.ndarray:
    """Linear quantile regression solved as a linear program (HiGHS)."""
    n, p = X.shape
    c = np.concatenate([np.zeros(p), np.full(n, tau), np.full(n, 1 - tau)])
    A = sparse.hstack([sparse.csr_matrix(X), sparse.eye(n), -sparse.eye(n)], format="csr")
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = optimize.linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    if not res.success:
        raise NumericalError(f"quantile regression failed: {res.message}")
    return res.x[:p]


def vqr_test(records, alpha: float, form: str = "score") -> TestResult:
    """Test of ``(intercept, slope) = (0, 1)`` in the alpha-quantile regression of r on VaR.

    ``form="score"`` (default) is the regression rank-score statistic
    ``S' (alpha (1 - alpha) X'X)^{-1} S`` with ``S = X' (alpha - hit)``
    evaluated at the null coefficients. ``form="wald"`` fits the quantile
    regression and uses the Hendricks-Koenker sandwich covariance with a
    Hall-Sheather bandwidth. Both are chi-square(2) under the null.
    """
    s = _series(records)
    n = len(s)
    if n < 100:
        raise ValidationError(f"VQR test needs at least 100 forecasts, got {n}")
    if np.ptp(s.var) <= 0:
        raise ValidationError("VaR forecasts are constant, the VQR design is singular")
    X = np.column_stack([np.ones(n), s.var])
    xtx = X.T @ X
    if np.linalg.cond(xtx) > 1e12:
        raise NumericalError("VQR design is numerically singular")
    if form == "score":
        score = X.T @ (alpha - (s.returns < s.var))
        stat = float(score @ np.linalg.solve(alpha * (1 - alpha) * xtx, score))
    elif form == "wald":
        beta = quantile_regression(s.returns, X, alpha)
        h = min(hall_sheather(n, alpha), 0.999 * alpha)
        spread = X @ (quantile_regression(s.returns, X, alpha + h) - quantile_regression(s.returns, X, alpha - h))
        dens = np.maximum(0.0, 2 * h / np.maximum(spread, 1e-10))
        H = (X * dens[:, None]).T @ X
        Hinv = np.linalg.inv(H)
        cov = alpha * (1 - alpha) * Hinv @ xtx @ Hinv
        d = beta - np.array([0.0, 1.0])
        stat = float(d @ np.linalg.solve(cov, d))
    else:
        raise ValidationError("form must be 'score' or 'wald'")
    return TestResult(stat, float(stats.chi2.sf(stat, 2)), 2, form)


@dataclass(frozen=True)
class BacktestReport:
    n: int
    vrate: float
    esrate: float
    uc: TestResult
    cc: TestResult
    dq1: TestResult
    dq4: TestResult
    vqr: TestResult | None
    quantile_loss: float
    joint_loss: float

    def as_dict(self) -> dict:
        out = {"n": self.n, "vrate": self.vrate, "esrate": self.esrate,
               "quantile_loss": self.quantile_loss, "joint_loss": _json_float(self.joint_loss)}
        for name in ("uc", "cc", "dq1", "dq4", "vqr"):
            res = getattr(self, name)
            out[name] = res.as_dict() if res is not None else None
        return out


def backtest(records, alpha: float, rng_seed=0, dq_method: str = "simulated", n_sim: int = 999) -> BacktestReport:
    """All tests plus the two loss totals for one model's forecasts.

    Tests whose sample-size preconditions fail are reported as skipped
    (NaN for DQ, ``None`` for VQR) rather than raising.
    """
    from ..model import joint_score, quantile_loss_terms

    s = _series(records)
    h = hits(s.returns, s.var)
    dq_seed1, dq_seed4 = spawn(rng_seed, 2)
    try:
        vqr = vqr_test(s, alpha)
    except (ValidationError, NumericalError) as exc:
        logger.warning("VQR test skipped: %s", exc)
        vqr = None
    dq = {}
    for lags, seed in ((1, dq_seed1), (4, dq_seed4)):
        try:
            dq[lags] = dq_test(s, lags, alpha, dq_method, n_sim, seed)
        except ValidationError as exc:
            logger.warning("DQ%d test skipped: %s", lags, exc)
            dq[lags] = TestResult(math.nan, math.nan, lags + 2, f"{dq_method} (skipped: too few forecasts)")
    return BacktestReport(
        n=len(s),
        vrate=float(h.mean()),
        esrate=esrate(s),
        uc=kupiec_uc(int(h.sum()), len(s), alpha),
        cc=christoffersen_cc(h, alpha),
        dq1=dq[1],
        dq4=dq[4],
        vqr=vqr,
        quantile_loss=float(np.sum(quantile_loss_terms(s.returns, s.var, alpha))),
        joint_loss=float(np.sum(joint_score(s.returns, s.var, s.es, alpha))),
    )
