"""Command-line interface.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import NumericalError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _add_seed(p):
    p.add_argument("--seed", type=int, default=0, help="master RNG seed (default 0)")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="escaviar", description="ES-CAViaR(-X) VaR/ES estimation and evaluation")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("measures", help="realized measures from intraday bars")
    p.add_argument("--input", required=True, help="intraday CSV: timestamp,open,high,low,close")
    p.add_argument("--bar-minutes", type=int, default=None, help="spacing of the input bars (default: --subsample)")
    p.add_argument("--interval", type=int, default=5, help="coarse interval for RV/RR and sub-sampling (minutes)")
    p.add_argument("--subsample", type=int, default=1, help="fine interval for sub-sampled measures (minutes)")
    p.add_argument("--scale-q", type=int, default=66, help="trailing window of the scaled measures")
    p.add_argument("--scale-interval", type=int, default=None, help="interval of the measure being scaled")
    p.add_argument("--kinds", default="RV,RR,ScRV,ScRR,SSRV,SSRR")
    p.add_argument("--unit", choices=("raw", "percent"), default="percent")
    p.add_argument("--out", required=True)
    _add_seed(p)

    p = sub.add_parser("simulate", help="Monte Carlo replication study")
    p.add_argument("--study", choices=("arx", "expx", "ar", "exp"), required=True)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--trials", type=int, default=50000, help="random gamma trials for the AR truth search")
    p.add_argument("--estimators", default="mcmc,mle")
    p.add_argument("--mcmc", choices=("desk", "full"), default="desk")
    p.add_argument("--starts", type=int, default=2000, help="MLE random starts")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="table CSV")
    _add_seed(p)

    p = sub.add_parser("fit", help="estimate one model on a daily series")
    p.add_argument("--data", required=True, help="daily CSV: date,open,high,low,close")
    p.add_argument("--measures", default=None, help="measures CSV: date,kind,value")
    p.add_argument("--model", choices=("ar", "exp"), default="exp")
    p.add_argument("--driver", choices=("absret", "rv", "rr", "scrv", "scrr", "ssrv", "ssrr"), default="absret")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--method", choices=("mle", "mcmc"), default="mle")
    p.add_argument("--starts", type=int, default=2000)
    p.add_argument("--mcmc", choices=("desk", "full"), default="desk")
    p.add_argument("--scale", choices=("raw", "percent"), default="percent")
    p.add_argument("--chain-out", default=None, help="CSV of retained posterior draws")
    p.add_argument("--out", default=None, help="JSON with the estimates and forecasts")
    _add_seed(p)

    p = sub.add_parser("forecast", help="rolling forecasts from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("backtest", help="backtest forecast CSVs")
    p.add_argument("--input", required=True, nargs="+", help="CSV(s): date,return,var,es")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--dq-sims", type=int, default=999)
    p.add_argument("--dq-method", choices=("simulated", "chi2"), default="simulated")
    p.add_argument("--out", default=None, help="report path (.json or .csv)")
    _add_seed(p)

    p = sub.add_parser("mcs", help="model confidence set over per-model loss CSVs")
    p.add_argument("--input-dir", required=True, help="directory of CSVs: date,<loss column>")
    p.add_argument("--loss", choices=("joint_loss", "quantile_loss"), default="joint_loss")
    p.add_argument("--stat", choices=("r", "sq"), default="r")
    p.add_argument("--reps", type=int, default=5000)
    p.add_argument("--block", type=int, default=10)
    p.add_argument("--confidence", type=float, default=0.90)
    p.add_argument("--out", default=None, help="JSON result")
    _add_seed(p)
    return parser


def _cmd_measures(args):
    from .market_data import load_intraday_csv
    from .realized import compute_measures, write_measures_csv

    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    bar = args.bar_minutes or args.subsample
    grids = load_intraday_csv(args.input, bar)
    measures = compute_measures(grids, kinds, interval=args.interval, subsample=args.subsample, q=args.scale_q,
                                scale=args.unit, scale_interval=args.scale_interval)
    write_measures_csv(measures, args.out)
    for kind, series in measures.items():
        print(f"{kind:>5}: {len(series)} days, mean {np.mean(series.values):.6g}")


def _cmd_simulate(args):
    from .estimate import McmcConfig
    from .sim import run_replication_study

    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    table = run_replication_study(args.study, args.reps, estimators, rng_seed=args.seed,
                                  mcmc_config=McmcConfig.desk() if args.mcmc == "desk" else McmcConfig(),
                                  mle_starts=args.starts, n_trials=args.trials, workers=args.workers)
    print(table.format())
    if args.out:
        table.write_csv(args.out)


def _cmd_fit(args):
    from .estimate import McmcConfig, mcmc_fit, mle_fit, write_chain_csv
    from .harness import MEASURE_FOR_DRIVER, align_driver
    from .market_data import load_daily_csv, log_returns
    from .model import ModelSpec
    from .realized import driver_from_measure, load_measures_csv

    returns = log_returns(load_daily_csv(args.data), args.scale)
    spec = ModelSpec(args.model, args.driver, args.alpha)
    if args.driver == "absret":
        x = np.abs(returns.values)
    else:
        if args.measures is None:
            raise ValidationError(f"--driver {args.driver} needs --measures")
        measures = load_measures_csv(args.measures, unit=args.scale)
        kind = MEASURE_FOR_DRIVER[args.driver]
        if kind not in measures:
            raise ValidationError(f"{args.measures} has no {kind} rows")
        x = align_driver(returns, driver_from_measure(measures[kind]))
    if args.method == "mle":
        res = mle_fit(spec, returns, x, n_starts=args.starts, rng_seed=args.seed)
    else:
        cfg = McmcConfig.desk() if args.mcmc == "desk" else McmcConfig()
        res = mcmc_fit(spec, returns, x, cfg, rng_seed=args.seed)
        if args.chain_out:
            write_chain_csv(res, args.chain_out)
    payload = {"model": spec.name, "method": res.method, "n": len(returns), "params": res.point.as_dict(),
               "log_lik": res.log_lik, "var_next": res.var_next, "es_next": res.es_next}
    print(json.dumps(payload, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def _cmd_forecast(args):
    from .harness import run_config

    run_config(args.config, seed=args.seed, out=args.out_dir)


def _cmd_backtest(args):
    from .evaluation import backtest
    from .harness import format_summary, read_forecast_csv, write_backtest_reports
    from .evaluation import loss_summary

    series = {Path(p).stem: read_forecast_csv(p) for p in args.input}
    seeds = np.random.SeedSequence(args.seed).spawn(len(series))
    reports = {name: backtest(s, args.alpha, rng_seed=sd, dq_method=args.dq_method, n_sim=args.dq_sims)
               for (name, s), sd in zip(series.items(), seeds)}
    try:
        summary = loss_summary(series, args.alpha)
    except ValidationError:
        summary = None
    if summary is not None:
        print(format_summary(reports, summary))
    else:
        print(json.dumps({k: r.as_dict() for k, r in reports.items()}, indent=2))
    if args.out:
        if args.out.endswith(".csv"):
            write_backtest_reports(reports, Path(args.out).with_suffix(".json"), args.out)
        else:
            write_backtest_reports(reports, args.out)


def _cmd_mcs(args):
    from .evaluation import mcs
    from .harness import read_loss_csv

    files = sorted(Path(args.input_dir).glob("*.csv"))
    if not files:
        raise ValidationError(f"no CSV files in {args.input_dir}")
    data = {f.stem: read_loss_csv(f, args.loss) for f in files}
    dates = next(iter(data.values()))[0]
    for name, (d, _) in data.items():
        if d != dates:
            raise ValidationError(f"{name}: loss dates are not aligned with the other models")
    res = mcs({k: v for k, (_, v) in data.items()}, args.stat, args.confidence, args.reps, args.block,
              rng_seed=args.seed)
    print(f"MCS ({res.statistic}, {res.confidence:.0%}) surviving: {', '.join(res.included)}")
    for name, p in res.pvalues.items():
        print(f"  {name:<24} p = {p:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(res.as_dict(), indent=2), encoding="utf-8")


COMMANDS = {"measures": _cmd_measures, "simulate": _cmd_simulate, "fit": _cmd_fit, "forecast": _cmd_forecast,
            "backtest": _cmd_backtest, "mcs": _cmd_mcs}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
