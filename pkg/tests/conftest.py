import math
from datetime import date, datetime, timedelta

import numpy as np
import pytest

from escaviar.market_data import IntradayGrid

ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail=""):
    ACCEPTANCE_LINES.append(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_grid(closes, highs=None, lows=None, open0=None, interval=1, day=date(2021, 3, 1), prev_close=None):
    closes = np.asarray(closes, dtype=float)
    n = closes.size
    open0 = closes[0] if open0 is None else open0
    opens = np.concatenate([[open0], closes[:-1]])
    highs = np.maximum(opens, closes) if highs is None else np.asarray(highs, dtype=float)
    lows = np.minimum(opens, closes) if lows is None else np.asarray(lows, dtype=float)
    start = datetime(day.year, day.month, day.day, 9, 30)
    stamps = np.array([start + timedelta(minutes=interval * (i + 1)) for i in range(n)], dtype="datetime64[m]")
    return IntradayGrid(day, interval, stamps, opens, highs, lows, closes, prev_close)


def random_grid(rng, n_bars=None, interval=1):
    n = int(rng.integers(1, 60)) if n_bars is None else n_bars
    logp = math.log(100.0) + np.cumsum(rng.normal(0, 0.001, n + 1))
    prices = np.exp(logp)
    opens, closes = prices[:-1], prices[1:]
    highs = np.maximum(opens, closes) * np.exp(np.abs(rng.normal(0, 0.0005, n)))
    lows = np.minimum(opens, closes) * np.exp(-np.abs(rng.normal(0, 0.0005, n)))
    return make_grid(closes, highs, lows, open0=opens[0], interval=interval)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
