"""Realized measures from intraday grids and the drivers built from them."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, ParseError, ScalingError, ValidationError
from .market_data import FOUR_LOG2, IntradayGrid, ReturnSeries, resample_grid

logger = logging.getLogger(__name__)

KINDS = ("RV", "RR", "ScRV", "ScRR", "SSRV", "SSRR")
# variance-scale conversion from raw log units to percent units
PERCENT_VARIANCE = 1.0e4


@dataclass(frozen=True)
class RealizedSeries:
    dates: tuple
    values: np.ndarray
    kind: str
    interval_minutes: int
    subsample_minutes: int | None = None
    unit: str = "raw"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dates", tuple(self.dates))
        if self.kind not in KINDS and self.kind not in ("r2", "Ra2"):
            raise ValidationError(f"unknown measure kind {self.kind!r}")
        if len(self.dates) != len(values):
            raise ValidationError("dates and values differ in length")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValidationError(f"{self.kind}: values must be finite and non-negative")

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class DriverSeries:
    """Volatility-scale driver ``X_t`` observed at the close of day ``t``."""

    dates: tuple
    values: np.ndarray
    kind: str
    unit: str = "percent"

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.dates) != len(self.values):
            raise ValidationError("dates and values differ in length")

    def __len__(self):
        return len(self.values)

    def window(self, start: int, stop: int) -> "DriverSeries":
        return DriverSeries(self.dates[start:stop], self.values[start:stop], self.kind, self.unit)


@dataclass(frozen=True)
class ScalingWindow:
    q: int = 66

    def __post_init__(self):
        if self.q < 1:
            raise ValidationError("scaling window q must be >= 1")


def _log_path(grid: IntradayGrid) -> np.ndarray:
    """Log prices at the interval boundaries 0..N (0 = first bar's open)."""
    prices = np.concatenate(([grid.open[0]], grid.close))
    if np.any(prices <= 0):
        raise DomainError(f"{grid.date}: non-positive price")
    return np.log(prices)


def _log_hl(grid: IntradayGrid):
    if np.any(grid.low <= 0):
        raise DomainError(f"{grid.date}: non-positive low")
    if np.any(grid.high < grid.low):
        raise DomainError(f"{grid.date}: bar with high < low")
    return np.log(grid.high), np.log(grid.low)


def realized_variance(grid: IntradayGrid) -> float:
    return float(np.sum(np.diff(_log_path(grid)) ** 2))


def realized_range(grid: IntradayGrid) -> float:
    lh, ll = _log_hl(grid)
    return float(np.sum((lh - ll) ** 2) / FOUR_LOG2)


def _subsample_factor(grid, coarse_minutes, fine_minutes):
    if fine_minutes < 1 or coarse_minutes % fine_minutes:
        raise ValidationError(f"coarse {coarse_minutes} must be a multiple of fine {fine_minutes}")
    if grid.interval_minutes != fine_minutes:
        raise ValidationError(f"grid interval {grid.interval_minutes} != fine interval {fine_minutes}")
    return coarse_minutes // fine_minutes


def subsampled_rv(grid: IntradayGrid, coarse_minutes: int, fine_minutes: int) -> float:
    """Average of coarse-grid RVs started at each fine-grid offset.

    An offset keeps only complete coarse steps; offsets without a single
    complete step are skipped and excluded from the average.
    """
    n_k = _subsample_factor(grid, coarse_minutes, fine_minutes)
    logp = _log_path(grid)
    total, used = 0.0, 0
    for i in range(n_k):
        pts = logp[i::n_k]
        if len(pts) < 2:
            continue
        total += np.sum(np.diff(pts) ** 2)
        used += 1
    if used == 0:
        raise DomainError(f"{grid.date}: {grid.n_bars} bars cannot hold a {coarse_minutes}-min step")
    return float(total / used)


def subsampled_rr(grid: IntradayGrid, coarse_minutes: int, fine_minutes: int) -> float:
    """Average of coarse-block realized ranges started at each fine-grid offset.

    Block extrema run over the fine bars inside each block; the final block
    of an offset is truncated at the last bar.
    """
    n_k = _subsample_factor(grid, coarse_minutes, fine_minutes)
    lh, ll = _log_hl(grid)
    n = grid.n_bars
    total, used = 0.0, 0
    for i in range(n_k):
        if i + n_k > n:
            continue
        starts = np.arange(0, n - i, n_k)
        hi = np.maximum.reduceat(lh[i:], starts)
        lo = np.minimum.reduceat(ll[i:], starts)
        total += np.sum((hi - lo) ** 2)
        used += 1
    if used == 0:
        raise DomainError(f"{grid.date}: {n} bars cannot hold a {coarse_minutes}-min block")
    return float(total / (FOUR_LOG2 * used))


def scaled_measure(
    high_freq: RealizedSeries,
    daily_proxy: RealizedSeries,
    window: ScalingWindow = ScalingWindow(),
    kind: str | None = None,
) -> RealizedSeries:
    """Rescale ``high_freq`` by the trailing ratio of daily proxy to measure.

    The first ``q`` days have no complete trailing window and are dropped.
    """
    if high_freq.dates != daily_proxy.dates:
        raise ValidationError("high-frequency and proxy series must share dates")
    q = window.q
    n = len(high_freq)
    if n <= q:
        raise ValidationError(f"need more than q={q} days, got {n}")
    hf, proxy = high_freq.values, daily_proxy.values
    den = sliding_window_view(hf, q)[:-1].sum(axis=1)
    num = sliding_window_view(proxy, q)[:-1].sum(axis=1)
    zero = np.nonzero(den <= 0)[0]
    if zero.size:
        raise ScalingError(f"{high_freq.dates[q + zero[0]]}: trailing {q}-day {high_freq.kind} sum is zero")
    values = num / den * hf[q:]
    if kind is None:
        kind = {"RV": "ScRV", "RR": "ScRR"}.get(high_freq.kind, high_freq.kind)
    return RealizedSeries(high_freq.dates[q:], values, kind, high_freq.interval_minutes,
                          high_freq.subsample_minutes, high_freq.unit)


def driver_from_measure(series: RealizedSeries) -> DriverSeries:
    kind = series.kind.lower()
    if kind not in ("rv", "rr", "scrv", "scrr", "ssrv", "ssrr"):
        kind = series.kind
    return DriverSeries(series.dates, np.sqrt(series.values), kind, series.unit)


def abs_return_driver(returns: ReturnSeries) -> DriverSeries:
    return DriverSeries(returns.dates, np.abs(returns.values), "absret", returns.unit)


def _scale_factor(scale):
    if scale not in ("raw", "percent"):
        raise ValidationError("scale must be 'raw' or 'percent'")
    return PERCENT_VARIANCE if scale == "percent" else 1.0


def compute_measures(
    grids: Sequence[IntradayGrid],
    kinds: Iterable[str] = KINDS,
    interval: int = 5,
    subsample: int | None = 1,
    q: int = 66,
    scale: str = "percent",
    scale_interval: int | None = None,
) -> dict[str, RealizedSeries]:
    """Daily realized series for each requested kind.

    ``interval`` is the measurement frequency for RV/RR (coarser bars are
    built from the input grids when needed). Sub-sampled measures use
    ``interval`` as the coarse step and ``subsample`` as the fine step, so the
    input grids must be at the ``subsample`` frequency. Scaled measures use
    the ``scale_interval`` (default ``interval``) series against the daily
    squared return / Parkinson range; days without a previous close are
    excluded from them.
    """
    kinds = list(kinds)
    unknown = set(kinds) - set(KINDS)
    if unknown:
        raise ValidationError(f"unknown measures {sorted(unknown)}")
    factor = _scale_factor(scale)
    dates = tuple(g.date for g in grids)
    out = {}

    def plain(minutes):
        coarse = [resample_grid(g, minutes) for g in grids]
        rv = np.array([realized_variance(g) for g in coarse]) * factor
        rr = np.array([realized_range(g) for g in coarse]) * factor
        return rv, rr

    cache = {}

    def get_plain(minutes):
        if minutes not in cache:
            cache[minutes] = plain(minutes)
        return cache[minutes]

    if "RV" in kinds or "RR" in kinds:
        rv, rr = get_plain(interval)
        if "RV" in kinds:
            out["RV"] = RealizedSeries(dates, rv, "RV", interval, unit=scale)
        if "RR" in kinds:
            out["RR"] = RealizedSeries(dates, rr, "RR", interval, unit=scale)

    if "SSRV" in kinds or "SSRR" in kinds:
        if subsample is None:
            raise ValidationError("sub-sampled measures need a fine (subsample) interval")
        if "SSRV" in kinds:
            vals = np.array([subsampled_rv(g, interval, subsample) for g in grids]) * factor
            out["SSRV"] = RealizedSeries(dates, vals, "SSRV", interval, subsample, scale)
        if "SSRR" in kinds:
            vals = np.array([subsampled_rr(g, interval, subsample) for g in grids]) * factor
            out["SSRR"] = RealizedSeries(dates, vals, "SSRR", interval, subsample, scale)

    if "ScRV" in kinds or "ScRR" in kinds:
        minutes = scale_interval or interval
        rv, rr = get_plain(minutes)
        keep = np.array([g.prev_close is not None for g in grids])
        kept_dates = tuple(d for d, k in zip(dates, keep) if k)
        if "ScRV" in kinds:
            r2 = np.array([(np.log(g.close[-1]) - np.log(g.prev_close)) ** 2 for g in grids if g.prev_close is not None])
            hf = RealizedSeries(kept_dates, rv[keep], "RV", minutes, unit=scale)
            proxy = RealizedSeries(kept_dates, r2 * factor, "r2", minutes, unit=scale)
            out["ScRV"] = scaled_measure(hf, proxy, ScalingWindow(q))
        if "ScRR" in kinds:
            ra2 = np.array([(np.log(g.day_high) - np.log(g.day_low)) ** 2 / FOUR_LOG2 for g in grids])
            hf = RealizedSeries(kept_dates, rr[keep], "RR", minutes, unit=scale)
            proxy = RealizedSeries(kept_dates, ra2[keep] * factor, "Ra2", minutes, unit=scale)
            out["ScRR"] = scaled_measure(hf, proxy, ScalingWindow(q))
    return {k: out[k] for k in kinds}


def write_measures_csv(measures: dict[str, RealizedSeries], path) -> None:
    """Write ``date,kind,value`` rows, one block per measure."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "kind", "value"])
        for kind, series in measures.items():
            for day, value in zip(series.dates, series.values):
                writer.writerow([day.isoformat(), kind, repr(float(value))])


def load_measures_csv(path, unit: str = "percent") -> dict[str, RealizedSeries]:
    rows: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"date", "kind", "value"} <= set(reader.fieldnames):
            raise ParseError("measures CSV needs columns date,kind,value", line=1)
        for row in reader:
            try:
                rows.setdefault(row["kind"], []).append((date.fromisoformat(row["date"]), float(row["value"])))
            except ValueError as exc:
                raise ParseError(str(exc), line=reader.line_num) from None
    out = {}
    for kind, items in rows.items():
        items.sort()
        out[kind] = RealizedSeries(tuple(d for d, _ in items), np.array([v for _, v in items]), kind, 0, unit=unit)
    return out
