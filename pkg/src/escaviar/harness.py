"""Rolling-window forecasting and the TOML-driven batch runner."""

from __future__ import annotations

import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from pathlib import Path

import numpy as np

from ._rng import seed_sequence
from .errors import ConfigError, EstimationError, NumericalError, ParseError, ValidationError
from .estimate import McmcConfig, mcmc_fit, mle_fit
from .evaluation import ForecastSeries, backtest, loss_frame, loss_summary, mcs
from .market_data import ReturnSeries, load_daily_csv, log_returns
from .model import InitPolicy, ModelSpec, _forecast_many, risk_path
from .realized import DriverSeries, abs_return_driver, load_measures_csv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

MAX_CONSECUTIVE_FAILURES = 10
MEASURE_FOR_DRIVER = {"rv": "RV", "rr": "RR", "scrv": "ScRV", "scrr": "ScRR", "ssrv": "SSRV", "ssrr": "SSRR"}
PACKAGE_PREFIX = "pkg:"


@dataclass(frozen=True)
class RollingConfig:
    in_sample_n: int
    models: tuple
    refit_every: int = 1
    method: str = "mle"
    seed: int = 0
    n_starts: int = 2000
    n_refine: int = 10
    mcmc: McmcConfig = field(default_factory=McmcConfig.desk)

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        if self.in_sample_n < 250:
            raise ValidationError("in_sample_n must be at least 250")
        if self.refit_every < 1:
            raise ValidationError("refit_every must be at least 1")
        if self.method not in ("mle", "mcmc"):
            raise ValidationError("method must be 'mle' or 'mcmc'")
        if not self.models:
            raise ValidationError("no models configured")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate models: {names}")


@dataclass
class ForecastLog:
    forecasts: dict
    fits: dict

    def models(self):
        return list(self.forecasts)


def align_driver(returns: ReturnSeries, driver: DriverSeries) -> np.ndarray:
    """Driver values on the return dates; ``X_t`` is known at the close of day ``t``."""
    lookup = dict(zip(driver.dates, driver.values))
    missing = [d for d in returns.dates if d not in lookup]
    if missing:
        raise ValidationError(f"driver {driver.kind!r} has no value for {missing[0]} ({len(missing)} dates missing)")
    return np.array([lookup[d] for d in returns.dates], dtype=float)


def _refit_seed(master, model_idx, refit_idx):
    base = seed_sequence(master)
    return np.random.SeedSequence(base.entropy, spawn_key=base.spawn_key + (model_idx, refit_idx))


def _fit_window(cfg, spec, r, x, seed):
    if cfg.method == "mle":
        res = mle_fit(spec, r, x, n_starts=cfg.n_starts, n_refine=cfg.n_refine, rng_seed=seed)
        return res, res.point.to_array()[None, :]
    res = mcmc_fit(spec, r, x, cfg.mcmc, rng_seed=seed)
    return res, res.draws


def rolling_forecast(config: RollingConfig, returns: ReturnSeries, drivers: dict | None = None) -> ForecastLog:
    """One-step forecasts from a fixed-length rolling window.

    The forecast for day ``t`` uses only the ``in_sample_n`` observations
    before ``t``. Parameters are re-estimated every ``refit_every`` days and
    otherwise re-used on the rolled window; an MCMC fit is re-used through
    its stored draws. A failed refit carries the previous parameters
    forward; more than ten consecutive failures abort the run.
    """
    drivers = drivers or {}
    r_all = np.asarray(returns.values, dtype=float)
    n = config.in_sample_n
    if r_all.size < n + 1:
        raise ValidationError(f"need at least {n + 1} returns for a rolling run, got {r_all.size}")
    forecasts, fits = {}, {}
    for m_idx, spec in enumerate(config.models):
        if spec.driver == "absret":
            x_all = np.abs(r_all)
        else:
            if spec.driver not in drivers:
                raise ValidationError(f"{spec.name}: no {spec.driver!r} driver supplied")
            x_all = align_driver(returns, drivers[spec.driver])
        var = np.empty(r_all.size - n)
        es = np.empty(r_all.size - n)
        fit_log, thetas, failures = [], None, 0
        for k, t in enumerate(range(n, r_all.size)):
            r_win, x_win = r_all[t - n:t], x_all[t - n:t]
            if k % config.refit_every == 0:
                seed = _refit_seed(config.seed, m_idx, k // config.refit_every)
                try:
                    res, thetas = _fit_window(config, spec, r_win, x_win, seed)
                    failures = 0
                    fit_log.append({"date": returns.dates[t], "ok": True, "params": res.point.as_dict(),
                                    "log_lik": res.log_lik})
                except (EstimationError, NumericalError) as exc:
                    failures += 1
                    fit_log.append({"date": returns.dates[t], "ok": False, "error": str(exc)})
                    if thetas is None:
                        raise EstimationError(f"{spec.name}: first fit failed: {exc}") from exc
                    if failures > MAX_CONSECUTIVE_FAILURES:
                        raise EstimationError(f"{spec.name}: {failures} consecutive fit failures") from exc
                    logger.warning("%s: fit for %s failed, re-using previous parameters", spec.name, returns.dates[t])
            q1, x1 = InitPolicy().resolve(r_win, spec.alpha)
            qn, en = _forecast_many(spec.code, np.ascontiguousarray(thetas), r_win, x_win, q1, x1)
            var[k], es[k] = qn.mean(), en.mean()
        if not (np.all(np.isfinite(var)) and np.all(np.isfinite(es))):
            raise NumericalError(f"{spec.name}: non-finite forecasts")
        forecasts[spec.name] = ForecastSeries(returns.dates[n:], r_all[n:], var, es)
        fits[spec.name] = fit_log
    return ForecastLog(forecasts, fits)


# --- persistence ---------------------------------------------------------------


def write_forecast_csv(series: ForecastSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "return", "var", "es"])
        for d, r, v, e in zip(series.dates, series.returns, series.var, series.es):
            writer.writerow([_iso(d), repr(float(r)), repr(float(v)), repr(float(e))])


def _iso(d):
    return d.isoformat() if hasattr(d, "isoformat") else str(d)


def read_forecast_csv(path) -> ForecastSeries:
    dates, cols = [], ([], [], [])
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"date", "return", "var", "es"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ParseError(f"{path}: forecast CSV needs columns date,return,var,es", line=1)
        for row in reader:
            try:
                dates.append(date.fromisoformat(row["date"]))
                for col, key in zip(cols, ("return", "var", "es")):
                    col.append(float(row[key]))
            except (ValueError, TypeError) as exc:
                raise ParseError(f"{path}: {exc}", line=reader.line_num) from None
    return ForecastSeries(tuple(dates), *cols)


def write_loss_csv(series: ForecastSeries, alpha: float, path) -> None:
    q = loss_frame({"m": series}, alpha, "quantile")[:, 0]
    j = loss_frame({"m": series}, alpha, "joint")[:, 0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "quantile_loss", "joint_loss"])
        for d, a, b in zip(series.dates, q, j):
            writer.writerow([_iso(d), repr(float(a)), repr(float(b))])


def read_loss_csv(path, column: str = "joint_loss"):
    dates, vals = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "date" not in reader.fieldnames or column not in reader.fieldnames:
            raise ParseError(f"{path}: loss CSV needs columns date,{column}", line=1)
        for row in reader:
            try:
                dates.append(row["date"])
                vals.append(float(row[column]))
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", line=reader.line_num) from None
    return tuple(dates), np.array(vals)


def write_backtest_reports(reports: dict, json_path, csv_path=None) -> None:
    payload = {name: rep.as_dict() for name, rep in reports.items()}
    Path(json_path).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    if csv_path is None:
        return
    tests = ("uc", "cc", "dq1", "dq4", "vqr")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "n", "vrate", "esrate"] + [f"{t}_p" for t in tests] + ["quantile_loss", "joint_loss"])
        for name, rep in reports.items():
            pv = [getattr(rep, t).p_value if getattr(rep, t) is not None else float("nan") for t in tests]
            writer.writerow([name, rep.n, rep.vrate, rep.esrate] + pv + [rep.quantile_loss, rep.joint_loss])


def package_data(name: str) -> Path:
    return Path(str(resources.files("escaviar") / "data" / name))


def resolve_path(value: str, base: Path) -> Path:
    if value.startswith(PACKAGE_PREFIX):
        path = package_data(value[len(PACKAGE_PREFIX):])
    else:
        path = Path(value)
        if not path.is_absolute():
            path = base / path
    if not path.exists():
        raise ConfigError(f"data file not found: {path}")
    return path


# --- TOML runner ---------------------------------------------------------------

SCHEMA = {
    "data": {"daily", "measures", "scale"},
    "rolling": {"in_sample", "refit_every", "alpha", "method", "seed", "max_forecasts"},
    "estimation": {"n_starts", "n_refine", "mcmc"},
    "models": {"kind", "driver"},
    "backtest": {"dq_sims", "dq_method"},
    "mcs": {"statistic", "reps", "block", "confidence", "loss"},
    "output": {"dir"},
}
REQUIRED = ("data", "rolling", "models")


def _check_keys(cfg: dict):
    unknown = [k for k in cfg if k not in SCHEMA]
    for section, keys in SCHEMA.items():
        value = cfg.get(section)
        entries = value if isinstance(value, list) else [value] if isinstance(value, dict) else []
        for entry in entries:
            unknown += [f"{section}.{k}" for k in entry if k not in keys]
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    missing = [s for s in REQUIRED if s not in cfg]
    if missing:
        raise ConfigError(f"missing configuration sections: {', '.join(missing)}")
    if not isinstance(cfg["models"], list):
        raise ConfigError("'models' must be an array of tables ([[models]])")


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    _check_keys(cfg)
    return cfg


def load_inputs(data_cfg: dict, base: Path):
    scale = data_cfg.get("scale", "percent")
    if "daily" not in data_cfg:
        raise ConfigError("data.daily is required")
    returns = log_returns(load_daily_csv(resolve_path(data_cfg["daily"], base)), scale)
    drivers = {}
    if "measures" in data_cfg:
        measures = load_measures_csv(resolve_path(data_cfg["measures"], base), unit=scale)
        for drv, kind in MEASURE_FOR_DRIVER.items():
            if kind in measures:
                drivers[drv] = DriverSeries(measures[kind].dates, np.sqrt(measures[kind].values), drv, scale)
    return returns, drivers


def run_config(path, seed: int | None = None, out=None) -> int:
    """Execute a TOML run description; returns 0 on success.

    Writes ``forecasts/<model>.csv``, ``losses/<model>.csv``,
    ``backtest.json``/``backtest.csv`` and, with an ``[mcs]`` table,
    ``mcs.json`` under ``output.dir`` (relative to the config file).
    """
    path = Path(path)
    cfg = load_config(path)
    base = path.parent
    roll = cfg["rolling"]
    alpha = float(roll.get("alpha", 0.01))
    est = cfg.get("estimation", {})
    mcmc_kind = est.get("mcmc", "desk")
    if mcmc_kind not in ("desk", "full"):
        raise ConfigError("estimation.mcmc must be 'desk' or 'full'")
    try:
        models = [ModelSpec(m.get("kind", "exp"), m.get("driver", "absret"), alpha) for m in cfg["models"]]
        rolling = RollingConfig(
            in_sample_n=int(roll.get("in_sample", 500)),
            models=models,
            refit_every=int(roll.get("refit_every", 1)),
            method=roll.get("method", "mle"),
            seed=int(seed if seed is not None else roll.get("seed", 0)),
            n_starts=int(est.get("n_starts", 2000)),
            n_refine=int(est.get("n_refine", 10)),
            mcmc=McmcConfig.desk() if mcmc_kind == "desk" else McmcConfig(),
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None

    returns, drivers = load_inputs(cfg["data"], base)
    if "max_forecasts" in roll:
        stop = min(len(returns), rolling.in_sample_n + int(roll["max_forecasts"]))
        returns = returns.window(0, stop)
    log = rolling_forecast(rolling, returns, drivers)

    out_dir = Path(out) if out is not None else base / cfg.get("output", {}).get("dir", "output")
    (out_dir / "forecasts").mkdir(parents=True, exist_ok=True)
    (out_dir / "losses").mkdir(parents=True, exist_ok=True)
    bt = cfg.get("backtest", {})
    reports = {}
    for i, (name, series) in enumerate(log.forecasts.items()):
        write_forecast_csv(series, out_dir / "forecasts" / f"{name}.csv")
        write_loss_csv(series, alpha, out_dir / "losses" / f"{name}.csv")
        reports[name] = backtest(series, alpha, rng_seed=_refit_seed(rolling.seed, i, 10 ** 6),
                                 dq_method=bt.get("dq_method", "simulated"), n_sim=int(bt.get("dq_sims", 999)))
    write_backtest_reports(reports, out_dir / "backtest.json", out_dir / "backtest.csv")
    summary = loss_summary(log.forecasts, alpha)

    mcs_out = None
    if "mcs" in cfg:
        m = cfg["mcs"]
        stats_ = m.get("statistic", ["R", "SQ"])
        stats_ = [stats_] if isinstance(stats_, str) else list(stats_)
        frame = loss_frame(log.forecasts, alpha, m.get("loss", "joint"))
        mcs_out = {}
        for s in stats_:
            res = mcs(frame, s, float(m.get("confidence", 0.90)), int(m.get("reps", 5000)), int(m.get("block", 10)),
                      rng_seed=rolling.seed, names=list(log.forecasts))
            mcs_out[res.statistic] = res.as_dict()
        (out_dir / "mcs.json").write_text(json.dumps(mcs_out, indent=2), encoding="utf-8")

    print(format_summary(reports, summary, mcs_out))
    return 0


def format_summary(reports: dict, summary, mcs_out=None) -> str:
    head = f"{'model':<18}{'n':>6}{'VRate%':>9}{'ESRate%':>9}{'UC p':>8}{'CC p':>8}{'DQ1 p':>8}{'DQ4 p':>8}{'VQR p':>8}{'QL':>11}{'JL':>11}"
    lines = [head]
    for i, (name, rep) in enumerate(reports.items()):
        pv = [getattr(rep, t).p_value if getattr(rep, t) is not None else float("nan")
              for t in ("uc", "cc", "dq1", "dq4", "vqr")]
        lines.append(f"{name:<18}{rep.n:>6}{100 * rep.vrate:>9.3f}{100 * rep.esrate:>9.3f}"
                     + "".join(f"{p:>8.3f}" for p in pv)
                     + f"{summary.quantile_loss[i]:>11.3f}{summary.joint_loss[i]:>11.3f}")
    if mcs_out:
        for stat, res in mcs_out.items():
            lines.append(f"MCS ({stat}, {res['confidence']:.0%}): {', '.join(res['included'])}")
    return "\n".join(lines)
