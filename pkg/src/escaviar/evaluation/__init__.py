"""Forecast evaluation: backtests, loss aggregation and the model confidence set."""

from .backtests import (BacktestReport, ForecastRecord, ForecastSeries, TestResult, backtest, christoffersen_cc,
                        dq_test, esrate, hall_sheather, hits, kupiec_uc, quantile_regression, vqr_test, vrate)
from .losses import LossSummary, loss_frame, loss_summary, mean_ranks
from .mcs import McsResult, block_bootstrap_means, mcs

__all__ = [
    "BacktestReport", "ForecastRecord", "ForecastSeries", "LossSummary", "McsResult", "TestResult", "backtest",
    "block_bootstrap_means", "christoffersen_cc", "dq_test", "esrate", "hall_sheather", "hits", "kupiec_uc",
    "loss_frame", "loss_summary", "mcs", "mean_ranks", "quantile_regression", "vqr_test", "vrate",
]
