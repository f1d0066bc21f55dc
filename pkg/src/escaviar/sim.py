"""Abs-GARCH(-X) data generation, exact risk truths and replication studies."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from importlib import resources

import numpy as np
from scipy.stats import norm

from ._jit import njit
from ._rng import seed_sequence, spawn
from .errors import DomainError, EstimationError, NumericalError, ValidationError
from .market_data import ReturnSeries
from .model import GAMMA_NAMES, BETA_NAMES, ModelSpec
from .realized import DriverSeries, RealizedSeries, load_measures_csv

logger = logging.getLogger(__name__)

SYNTHETIC_RV_FILE = "synthetic_rv.csv"
STUDIES = {
    "arx": ("ar", "rv", 1905),
    "expx": ("exp", "rv", 1905),
    "ar": ("ar", "absret", 1900),
    "exp": ("exp", "absret", 1900),
}
MAX_FAIL_SHARE = 0.05


@dataclass(frozen=True)
class DgpSpec:
    """Abs-GARCH(-X): ``sd_t = omega + a1 X_{t-1} + b1 sd_{t-1}``, ``r_t = sd_t e_t``.

    ``driver`` holds an external volatility-scale series ``X`` (e.g. the
    square root of RV); ``None`` means ``X_t = |r_t|``.
    """

    omega: float = 0.02
    a1: float = 0.10
    b1: float = 0.85
    driver: np.ndarray | None = field(default=None, compare=False)
    n: int = 1900
    h1: float | None = None
    burn_in: int = 500

    def __post_init__(self):
        if self.omega <= 0 or self.a1 < 0 or self.b1 < 0:
            raise ValidationError("need omega > 0 and a1, b1 >= 0")
        if self.n < 2:
            raise ValidationError("n must be at least 2")
        if self.driver is not None:
            drv = np.asarray(self.driver, dtype=float)
            object.__setattr__(self, "driver", drv)
            if drv.size < self.n:
                raise ValidationError(f"driver has {drv.size} values, need n={self.n}")
            if np.any(drv < 0):
                raise ValidationError("driver must be non-negative")
        elif self.b1 + self.a1 * math.sqrt(2.0 / math.pi) >= 1.0:
            raise ValidationError("absolute-return DGP is not covariance stationary")


@dataclass(frozen=True)
class SimulatedPath:
    returns: ReturnSeries
    sd: np.ndarray
    sd_next: float
    driver: DriverSeries


@dataclass(frozen=True)
class TrueRisk:
    var_series: np.ndarray
    es_series: np.ndarray
    var_next: float
    es_next: float


def business_dates(n: int, start: str = "2000-01-03") -> tuple:
    days = np.busday_offset(np.datetime64(start, "D"), np.arange(n), roll="forward")
    return tuple(date.fromisoformat(str(d)) for d in days)


def simulate_abs_garch(spec: DgpSpec, rng_seed=None) -> SimulatedPath:
    """Simulate returns and the conditional sd path, plus ``sd_{n+1}``.

    With an external driver the recursion is burned in for ``burn_in``
    steps on driver values resampled from the series, starting at
    ``(omega + a1 mean(X)) / (1 - b1)``, which makes the sample path
    independent of the arbitrary start. With absolute returns the path
    starts at the unconditional level ``omega / (1 - b1 - a1 sqrt(2/pi))``.
    ``h1`` overrides either start (given on the sd scale).
    """
    rng = np.random.default_rng(seed_sequence(rng_seed))
    n = spec.n
    sd = np.empty(n)
    r = np.empty(n)
    if spec.driver is not None:
        x = spec.driver[:n]
        s = spec.h1 if spec.h1 is not None else (spec.omega + spec.a1 * x.mean()) / (1.0 - spec.b1)
        x_prev = x.mean()
        for v in rng.choice(x, size=spec.burn_in):
            s = spec.omega + spec.a1 * x_prev + spec.b1 * s
            x_prev = v
        eps = rng.standard_normal(n)
        for t in range(n):
            s = spec.omega + spec.a1 * x_prev + spec.b1 * s
            sd[t] = s
            r[t] = s * eps[t]
            x_prev = x[t]
        drv = x.copy()
        kind = "rv"
    else:
        eps = rng.standard_normal(n)
        scale = spec.h1 if spec.h1 is not None else spec.omega / (1.0 - spec.b1 - spec.a1 * math.sqrt(2.0 / math.pi))
        sd[0] = scale
        r[0] = scale * eps[0]
        for t in range(1, n):
            sd[t] = spec.omega + spec.a1 * abs(r[t - 1]) + spec.b1 * sd[t - 1]
            r[t] = sd[t] * eps[t]
        drv = np.abs(r)
        kind = "absret"
    sd_next = spec.omega + spec.a1 * drv[-1] + spec.b1 * sd[-1]
    dates = business_dates(n)
    return SimulatedPath(ReturnSeries(dates, r, "percent"), sd, float(sd_next), DriverSeries(dates, drv, kind))


def true_var_es(sd_series, alpha: float, sd_next: float | None = None) -> TrueRisk:
    sd = np.asarray(sd_series, dtype=float)
    if np.any(sd <= 0):
        raise DomainError("conditional sd must be positive")
    z = norm.ppf(alpha)
    tail = norm.pdf(z) / alpha
    nxt = float(sd[-1] if sd_next is None else sd_next)
    return TrueRisk(sd * z, -sd * tail, nxt * z, -nxt * tail)


def map_true_betas(dgp, alpha: float) -> tuple:
    """Quantile-recursion betas implied by the DGP: ``(omega z, a1 z, b1)``.

    ``dgp`` is a :class:`DgpSpec` or a plain ``(omega, a1, b1)`` triple; the
    triple form allows degenerate coefficients such as ``omega = 0``.
    """
    omega, a1, b1 = (dgp.omega, dgp.a1, dgp.b1) if isinstance(dgp, DgpSpec) else map(float, dgp)
    z = norm.ppf(alpha)
    return (omega * z, a1 * z, b1)


def solve_true_gamma_exp(true_risk: TrueRisk) -> float:
    var, es = true_risk.var_series, true_risk.es_series
    if np.any(var >= 0):
        raise DomainError("true VaR must be negative")
    ratio = es / var
    if np.any(ratio <= 1.0):
        raise DomainError("ES/VaR ratio must exceed 1")
    return float(np.mean(np.log(ratio - 1.0)))


@njit(cache=True)
def _ar_loglik_given_q(gammas, r, q, x1, alpha):
    """AL log-likelihood of the AR shortfall recursion on a fixed VaR path."""
    out = np.empty(gammas.shape[0])
    n = r.shape[0]
    for k in range(gammas.shape[0]):
        g0, g1, g2 = gammas[k, 0], gammas[k, 1], gammas[k, 2]
        off = x1
        total = 0.0
        for t in range(n):
            if t > 0 and r[t - 1] <= q[t - 1]:
                off = g0 + g1 * (q[t - 1] - r[t - 1]) + g2 * off
            es = q[t] - off
            if not es < 0.0:
                total = -np.inf
                break
            ind = 1.0 if r[t] <= q[t] else 0.0
            total += math.log((alpha - 1.0) / es) + (r[t] - q[t]) * (alpha - ind) / (alpha * es)
        out[k] = total
    return out


def search_true_gamma_ar(true_risk: TrueRisk, returns, alpha: float, n_trials: int = 50000, rng_seed=None):
    """Best of ``n_trials`` uniform ``[0, 1]^3`` gammas given the true VaR path.

    The shortfall offset starts at the true ``VaR_1 - ES_1``.
    """
    if n_trials < 1:
        raise ValidationError("n_trials must be positive")
    r = np.asarray(getattr(returns, "values", returns), dtype=float)
    q = np.asarray(true_risk.var_series, dtype=float)
    if r.shape != q.shape:
        raise ValidationError("returns and true VaR path are not aligned")
    x1 = float(q[0] - true_risk.es_series[0])
    trials = np.random.default_rng(seed_sequence(rng_seed)).uniform(0.0, 1.0, size=(n_trials, 3))
    ll = _ar_loglik_given_q(trials, r, q, x1, alpha)
    return tuple(float(v) for v in trials[int(np.argmax(ll))])


def synthetic_rv_series(n: int = 1905, mu: float = -0.43, phi: float = 0.96, sigma: float = 0.3,
                        rng_seed=141, target_var_next: float | None = -1.7523, alpha: float = 0.01) -> RealizedSeries:
    """Seeded log-AR(1) realized variance in percent-squared units.

    When ``target_var_next`` is given, the series is rescaled so that the
    default Abs-GARCH-X DGP yields that true one-step VaR at the end of the
    sample (the sd recursion is affine in the driver).
    """
    rng = np.random.default_rng(rng_seed)
    lv = np.empty(n)
    lv[0] = mu + sigma / math.sqrt(1 - phi ** 2) * rng.standard_normal()
    for t in range(1, n):
        lv[t] = mu + phi * (lv[t - 1] - mu) + sigma * rng.standard_normal()
    x = np.exp(0.5 * lv)
    if target_var_next is not None:
        dgp = DgpSpec(n=n, driver=x)
        # sd_{n+1} = A + c * B when the driver is scaled by c; start effect is b1^(n+burn) ~ 0
        weights = dgp.b1 ** np.arange(n)[::-1]
        a_part = dgp.omega / (1.0 - dgp.b1)
        b_part = dgp.a1 * float(weights @ x)
        target_sd = target_var_next / norm.ppf(alpha)
        x = x * (target_sd - a_part) / b_part
    return RealizedSeries(business_dates(n), x ** 2, "RV", 5, unit="percent")


def load_synthetic_rv() -> RealizedSeries:
    ref = resources.files("escaviar") / "data" / SYNTHETIC_RV_FILE
    with resources.as_file(ref) as path:
        return load_measures_csv(path)["RV"]


# --- replication studies -----------------------------------------------------


@dataclass
class ReplicationTable:
    """Mean/RMSE summary in the layout: rows are parameters and forecasts."""

    study: str
    rows: tuple
    true: np.ndarray
    mean: dict
    rmse: dict
    n_ok: dict
    n_failed: dict
    estimates: dict = field(default_factory=dict)
    truths: np.ndarray | None = None

    def columns(self):
        cols = ["True"]
        for est in self.mean:
            label = "ML" if est == "mle" else est.upper()
            cols += [f"{label} Mean", f"{label} RMSE"]
        return cols

    def to_rows(self):
        out = []
        for i, name in enumerate(self.rows):
            vals = [self.true[i]]
            for est in self.mean:
                vals += [self.mean[est][i], self.rmse[est][i]]
            out.append((name, vals))
        return out

    def write_csv(self, path, decimals: int = 4) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["quantity"] + self.columns())
            for name, vals in self.to_rows():
                writer.writerow([name] + [f"{v:.{decimals}f}" for v in vals])

    def format(self, decimals: int = 4) -> str:
        cols = self.columns()
        lines = ["".join([f"{'':>10}"] + [f"{c:>12}" for c in cols])]
        for name, vals in self.to_rows():
            lines.append("".join([f"{name:>10}"] + [f"{v:>12.{decimals}f}" for v in vals]))
        return "\n".join(lines)


def _fit(estimator, spec, returns, driver, seed, mcmc_config, mle_starts):
    from .estimate import mcmc_fit, mle_fit

    if estimator == "mcmc":
        return mcmc_fit(spec, returns, driver, mcmc_config, rng_seed=seed)
    if estimator == "mle":
        return mle_fit(spec, returns, driver, n_starts=mle_starts, rng_seed=seed)
    raise ValidationError(f"unknown estimator {estimator!r}")


def _replicate(args):
    study, seed, estimators, driver, mcmc_config, mle_starts, n_trials, alpha = args
    kind, drv_kind, n = STUDIES[study]
    data_seed, truth_seed, fit_seed = spawn(seed, 3)
    dgp = DgpSpec(n=n, driver=driver)
    sim = simulate_abs_garch(dgp, data_seed)
    truth = true_var_es(sim.sd, alpha, sim.sd_next)
    if kind == "exp":
        gammas = (solve_true_gamma_exp(truth),)
    else:
        gammas = search_true_gamma_ar(truth, sim.returns, alpha, n_trials, truth_seed)
    true_row = np.array(map_true_betas(dgp, alpha) + tuple(gammas) + (truth.var_next, truth.es_next))
    spec = ModelSpec(kind, drv_kind, alpha)
    fits = {}
    # every estimator sees the same dataset and the same fitting seed
    for est in estimators:
        try:
            res = _fit(est, spec, sim.returns, sim.driver, fit_seed, mcmc_config, mle_starts)
            fits[est] = np.concatenate([res.point.to_array(), [res.var_next, res.es_next]])
        except (EstimationError, NumericalError) as exc:
            logger.warning("replication failed for %s: %s", est, exc)
            fits[est] = None
    return true_row, fits


def run_replication_study(
    study: str,
    n_reps: int,
    estimators=("mcmc", "mle"),
    rng_seed=0,
    mcmc_config=None,
    mle_starts: int = 2000,
    n_trials: int = 50000,
    driver=None,
    alpha: float = 0.01,
    workers: int = 1,
) -> ReplicationTable:
    """Simulate ``n_reps`` datasets, fit each estimator and summarise.

    Replication ``i`` uses the ``i``-th child of the master seed. X studies
    re-use one driver path (the packaged synthetic RV unless ``driver`` is
    given) across replications.
    """
    from .estimate import McmcConfig

    if study not in STUDIES:
        raise ValidationError(f"study must be one of {sorted(STUDIES)}")
    if n_reps < 1:
        raise ValidationError("n_reps must be positive")
    estimators = tuple(estimators)
    kind, drv_kind, n = STUDIES[study]
    if drv_kind == "rv":
        if driver is None:
            driver = np.sqrt(load_synthetic_rv().values)
        driver = np.asarray(getattr(driver, "values", driver), dtype=float)
    else:
        driver = None
    mcmc_config = mcmc_config or McmcConfig.desk()
    seeds = spawn(rng_seed, n_reps)
    jobs = [(study, s, estimators, driver, mcmc_config, mle_starts, n_trials, alpha) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, jobs))
    else:
        results = [_replicate(job) for job in jobs]

    truths = np.array([t for t, _ in results])
    rows = BETA_NAMES + GAMMA_NAMES[kind] + ("VaR_next", "ES_next")
    mean, rmse, n_ok, n_failed, est_store = {}, {}, {}, {}, {}
    for est in estimators:
        ok = [i for i, (_, f) in enumerate(results) if f[est] is not None]
        n_failed[est] = n_reps - len(ok)
        n_ok[est] = len(ok)
        if n_failed[est] > MAX_FAIL_SHARE * n_reps:
            raise EstimationError(f"{est}: {n_failed[est]} of {n_reps} replications failed",
                                  {"failed": n_failed[est]})
        draws = np.array([results[i][1][est] for i in ok])
        mean[est] = draws.mean(axis=0)
        rmse[est] = np.sqrt(np.mean((draws - truths[ok]) ** 2, axis=0))
        est_store[est] = draws
    return ReplicationTable(study, rows, truths.mean(axis=0), mean, rmse, n_ok, n_failed, est_store, truths)


def sample_daily_bars(n_returns: int = 600, rng_seed=11, start_price: float = 1000.0):
    """Synthetic OHLC bars whose close-to-close percent returns follow the X DGP.

    The bars share dates with the packaged synthetic RV series, so a driver
    value exists for every return date. Intraday extremes are drawn around
    the open/close with a spread proportional to the conditional sd.
    """
    from .market_data import DailyBar

    rv = load_synthetic_rv()
    if n_returns + 1 > len(rv):
        raise ValidationError(f"at most {len(rv) - 1} returns available")
    ss_path, ss_bars = spawn(rng_seed, 2)
    x = np.sqrt(rv.values[1:n_returns + 1])
    sim = simulate_abs_garch(DgpSpec(n=n_returns, driver=x), ss_path)
    rng = np.random.default_rng(ss_bars)
    closes = start_price * np.exp(np.concatenate([[0.0], np.cumsum(sim.returns.values) / 100.0]))
    bars = []
    for i, day in enumerate(rv.dates[:n_returns + 1]):
        sd = sim.sd[max(i - 1, 0)] / 100.0
        close = float(np.round(closes[i], 4))
        open_ = float(np.round(closes[i - 1] * math.exp(0.1 * sd * rng.standard_normal()), 4)) if i else close
        up, down = np.abs(rng.standard_normal(2)) * 0.5 * sd
        high = float(np.round(max(open_, close) * math.exp(up), 4))
        low = float(np.round(min(open_, close) * math.exp(-down), 4))
        bars.append(DailyBar(day, open_, max(high, open_, close), min(low, open_, close), close))
    return bars
