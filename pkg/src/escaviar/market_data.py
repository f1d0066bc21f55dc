"""Daily and intraday price ingestion, log returns and the Parkinson range."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, ParseError, ValidationError

logger = logging.getLogger(__name__)

DAILY_COLUMNS = ("date", "open", "high", "low", "close")
INTRADAY_COLUMNS = ("timestamp", "open", "high", "low", "close")
SCALES = ("raw", "percent")
FOUR_LOG2 = 4.0 * math.log(2.0)


@dataclass(frozen=True)
class DailyBar:
    date: date
    open: float
    high: float
    low: float
    close: float

    def __post_init__(self):
        prices = (self.open, self.high, self.low, self.close)
        if not all(math.isfinite(p) and p > 0 for p in prices):
            raise ValidationError(f"{self.date}: prices must be positive and finite")
        if self.high < self.low:
            raise ValidationError(f"{self.date}: high {self.high} < low {self.low}")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise ValidationError(f"{self.date}: open/close outside [low, high]")


@dataclass(frozen=True)
class IntradayGrid:
    """One trading day of equally spaced bars.

    ``open[0]`` is the reference price of the first interval; ``close[i]`` is
    the price at the end of interval ``i + 1``. ``prev_close`` is ``None``
    for the first day of a file.
    """

    date: date
    interval_minutes: int
    timestamps: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    prev_close: float | None = None

    def __post_init__(self):
        n = len(self.close)
        if n < 1:
            raise ValidationError(f"{self.date}: grid needs at least one bar")
        if not (len(self.open) == len(self.high) == len(self.low) == len(self.timestamps) == n):
            raise ValidationError(f"{self.date}: bar arrays differ in length")
        if self.interval_minutes < 1:
            raise ValidationError("interval_minutes must be a positive integer")

    @property
    def n_bars(self) -> int:
        return len(self.close)

    @property
    def day_high(self) -> float:
        return float(np.max(self.high))

    @property
    def day_low(self) -> float:
        return float(np.min(self.low))


@dataclass(frozen=True)
class ReturnSeries:
    dates: tuple
    values: np.ndarray
    unit: str = "percent"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.dates) != len(values):
            raise ValidationError("dates and values differ in length")
        if not np.all(np.isfinite(values)):
            raise ValidationError("returns must be finite")
        if self.unit not in SCALES:
            raise ValidationError(f"unknown unit {self.unit!r}")

    def __len__(self):
        return len(self.values)

    def window(self, start: int, stop: int) -> "ReturnSeries":
        return ReturnSeries(self.dates[start:stop], self.values[start:stop], self.unit)


def _resolve_schema(header, expected, schema):
    mapping = dict(zip(expected, expected))
    if schema:
        unknown = set(schema) - set(expected)
        if unknown:
            raise ValidationError(f"unknown schema fields: {sorted(unknown)}")
        mapping.update(schema)
    missing = [col for col in mapping.values() if col not in header]
    if missing:
        raise ParseError(f"missing columns {missing} in header {header}", line=1)
    return {key: header.index(col) for key, col in mapping.items()}


def _parse_float(text, line, column):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"column {column!r}: {text!r} is not numeric", line=line) from None


def load_daily_csv(path: str | Path, schema: Mapping[str, str] | None = None) -> list[DailyBar]:
    """Read ``date,open,high,low,close`` rows into bars sorted by date.

    ``schema`` maps the canonical field names onto the file's column names,
    e.g. ``{"close": "adj_close"}``.
    """
    bars = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("file is empty, header row required", line=1)
        header = [h.strip() for h in header]
        idx = _resolve_schema(header, DAILY_COLUMNS, schema)
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=line)
            try:
                day = date.fromisoformat(row[idx["date"]].strip())
            except ValueError:
                raise ParseError(f"bad date {row[idx['date']]!r}", line=line) from None
            prices = [_parse_float(row[idx[c]], line, c) for c in DAILY_COLUMNS[1:]]
            bars.append(DailyBar(day, *prices))
    bars.sort(key=lambda b: b.date)
    for prev, cur in zip(bars, bars[1:]):
        if prev.date == cur.date:
            raise ValidationError(f"duplicate date {cur.date}")
    return bars


def write_daily_csv(bars: Sequence[DailyBar], path: str | Path, decimals: int = 6) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(DAILY_COLUMNS)
        for b in bars:
            writer.writerow([b.date.isoformat()] + [f"{p:.{decimals}f}" for p in (b.open, b.high, b.low, b.close)])


def load_intraday_csv(
    path: str | Path,
    interval_minutes: int,
    max_count_deviation: float = 0.10,
) -> list[IntradayGrid]:
    """Read ``timestamp,open,high,low,close`` bars and group them by day.

    Within a day bars must be spaced exactly ``interval_minutes`` apart.
    Days whose bar count deviates from the modal count by more than
    ``max_count_deviation`` (as a fraction) are dropped with a warning.
    """
    if interval_minutes < 1:
        raise ValidationError("interval_minutes must be a positive integer")
    rows: dict[date, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("file is empty, header row required", line=1)
        header = [h.strip() for h in header]
        idx = _resolve_schema(header, INTRADAY_COLUMNS, None)
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            stamp = row[idx["timestamp"]].strip()
            try:
                ts = datetime.fromisoformat(stamp)
            except ValueError:
                raise ParseError(f"bad timestamp {stamp!r}", line=line) from None
            o, h, lo, c = (_parse_float(row[idx[k]], line, k) for k in INTRADAY_COLUMNS[1:])
            if not (lo > 0 and min(o, c) > 0):
                raise ValidationError(f"{stamp}: prices must be positive")
            if h < lo:
                raise ValidationError(f"{stamp}: high {h} < low {lo}")
            rows.setdefault(ts.date(), []).append((ts, o, h, lo, c))

    step = np.timedelta64(interval_minutes, "m")
    days = sorted(rows)
    modal = Counter(len(rows[d]) for d in days).most_common(1)[0][0] if days else 0
    grids = []
    prev_close = None
    for day in days:
        bars = sorted(rows[day], key=lambda r: r[0])
        stamps = np.array([b[0] for b in bars], dtype="datetime64[m]")
        gaps = np.diff(stamps)
        bad = np.nonzero(gaps != step)[0]
        if bad.size:
            raise ValidationError(f"{bars[bad[0] + 1][0].isoformat()}: irregular spacing, expected {interval_minutes} min")
        arr = np.array([b[1:] for b in bars], dtype=float)
        last_close = float(arr[-1, 3])
        if abs(len(bars) - modal) > max_count_deviation * modal:
            logger.warning("dropping %s: %d bars vs modal %d", day, len(bars), modal)
            prev_close = last_close
            continue
        grids.append(IntradayGrid(day, interval_minutes, stamps, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], prev_close))
        prev_close = last_close
    return grids


def resample_grid(grid: IntradayGrid, minutes: int) -> IntradayGrid:
    """Aggregate consecutive bars into ``minutes``-wide bars (last one may be partial)."""
    if minutes % grid.interval_minutes:
        raise ValidationError(f"{minutes} is not a multiple of {grid.interval_minutes}")
    k = minutes // grid.interval_minutes
    if k == 1:
        return grid
    starts = np.arange(0, grid.n_bars, k)
    ends = np.minimum(starts + k, grid.n_bars) - 1
    return IntradayGrid(
        grid.date,
        minutes,
        grid.timestamps[starts],
        grid.open[starts],
        np.maximum.reduceat(grid.high, starts),
        np.minimum.reduceat(grid.low, starts),
        grid.close[ends],
        grid.prev_close,
    )


def log_returns(bars: Sequence[DailyBar], scale: str = "percent") -> ReturnSeries:
    """Close-to-close log returns; the first bar only supplies ``C_0``."""
    if scale not in SCALES:
        raise ValidationError(f"scale must be one of {SCALES}")
    if len(bars) < 2:
        raise ValidationError("need at least two bars for a return")
    closes = np.array([b.close for b in bars], dtype=float)
    if np.any(closes <= 0):
        raise DomainError("non-positive close price")
    values = np.diff(np.log(closes))
    if scale == "percent":
        values = 100.0 * values
    return ReturnSeries(tuple(b.date for b in bars[1:]), values, scale)


def parkinson_range(bar: DailyBar) -> float:
    """Squared high-low range scaled by ``4 log 2``."""
    return (math.log(bar.high) - math.log(bar.low)) ** 2 / FOUR_LOG2
