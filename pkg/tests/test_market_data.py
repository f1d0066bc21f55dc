import math
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from escaviar.errors import DomainError, ParseError, ValidationError
from escaviar.market_data import (DailyBar, ReturnSeries, load_daily_csv, load_intraday_csv, log_returns,
                                  parkinson_range, resample_grid, write_daily_csv)

from conftest import make_grid


def _bars(closes):
    return [DailyBar(date(2020, 1, 2 + i), c, c, c, c) for i, c in enumerate(closes)]


def test_load_daily_sorts(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("date,open,high,low,close\n2020-01-03,100.5,102,100,101\n2020-01-02,100,101,99,100.5\n")
    bars = load_daily_csv(p)
    assert [b.date for b in bars] == [date(2020, 1, 2), date(2020, 1, 3)]
    assert bars[0].close == 100.5


def test_load_daily_header_only(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("date,open,high,low,close\n")
    assert load_daily_csv(p) == []


def test_load_daily_high_below_low_names_date(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("date,open,high,low,close\n2020-01-02,100,99,101,100\n")
    with pytest.raises(ValidationError, match="2020-01-02"):
        load_daily_csv(p)


def test_load_daily_bad_row_names_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("date,open,high,low,close\n2020-01-02,100,101,99,100\n2020-01-03,abc,101,99,100\n")
    with pytest.raises(ParseError, match="line 3"):
        load_daily_csv(p)


def test_load_daily_duplicates_rejected(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("date,open,high,low,close\n2020-01-02,100,101,99,100\n2020-01-02,100,101,99,100\n")
    with pytest.raises(ValidationError, match="duplicate"):
        load_daily_csv(p)


def test_load_daily_schema_mapping(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("day,o,h,l,c\n2020-01-02,100,101,99,100\n")
    bars = load_daily_csv(p, {"date": "day", "open": "o", "high": "h", "low": "l", "close": "c"})
    assert bars[0].high == 101


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    closes = np.round(100 * np.exp(np.cumsum(rng.normal(0, 0.01, 20))), 6)
    bars = [DailyBar(date(2020, 1, 1).fromordinal(737426 + i), c, round(c * 1.01, 6), round(c * 0.99, 6), c)
            for i, c in enumerate(closes)]
    p = tmp_path / "rt.csv"
    write_daily_csv(bars, p, decimals=6)
    assert load_daily_csv(p) == bars


def test_log_returns_examples():
    assert log_returns(_bars([100, 100])).values[0] == 0.0
    raw = log_returns(_bars([100, 100 * math.e ** 0.01]), scale="raw")
    assert raw.values[0] == pytest.approx(0.01, abs=1e-12)
    pct = log_returns(_bars([100, 105, 103.95]))
    np.testing.assert_allclose(np.round(pct.values, 3), [4.879, -1.005])
    assert pct.unit == "percent" and len(pct) == 2


def test_log_returns_needs_two_bars():
    with pytest.raises(ValidationError):
        log_returns(_bars([100]))


def test_nonpositive_price_rejected():
    with pytest.raises(ValidationError):
        DailyBar(date(2020, 1, 2), 0.0, 1.0, 0.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.5, 2.0), min_size=2, max_size=30), st.floats(0.01, 100.0))
def test_log_returns_scale_invariant(closes, k):
    a = log_returns(_bars(closes)).values
    b = log_returns(_bars([c * k for c in closes])).values
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_parkinson_examples():
    d = date(2020, 1, 2)
    assert parkinson_range(DailyBar(d, 5, 5, 5, 5)) == 0.0
    assert round(parkinson_range(DailyBar(d, 2, math.e ** 2, 1, 2)), 4) == 1.4427
    assert round(parkinson_range(DailyBar(d, 1.5, 2, 1, 1.5)), 5) == 0.17329


def _intraday(tmp_path, rows):
    p = tmp_path / "i.csv"
    p.write_text("timestamp,open,high,low,close\n" + "\n".join(rows) + "\n")
    return p


def test_intraday_one_day(tmp_path):
    rows = [f"2021-03-01T{9 + (35 + 5 * i) // 60:02d}:{(35 + 5 * i) % 60:02d},100,101,99,100" for i in range(78)]
    grids = load_intraday_csv(_intraday(tmp_path, rows), 5)
    assert len(grids) == 1 and grids[0].n_bars == 78 and grids[0].prev_close is None


def test_intraday_two_days_chain_prev_close(tmp_path):
    rows = ["2021-03-01T09:31,100,101,99,100", "2021-03-01T09:32,100,101,99,100.7",
            "2021-03-02T09:31,100,101,99,100", "2021-03-02T09:32,100,101,99,101"]
    grids = load_intraday_csv(_intraday(tmp_path, rows), 1)
    assert len(grids) == 2
    assert grids[1].prev_close == 100.7


def test_intraday_high_below_low_names_timestamp(tmp_path):
    rows = ["2021-03-01T09:31,100,101,99,100", "2021-03-01T09:32,100,98,99,100"]
    with pytest.raises(ValidationError, match="09:32"):
        load_intraday_csv(_intraday(tmp_path, rows), 1)


def test_intraday_irregular_spacing(tmp_path):
    rows = ["2021-03-01T09:31,100,101,99,100", "2021-03-01T09:33,100,101,99,100"]
    with pytest.raises(ValidationError, match="irregular"):
        load_intraday_csv(_intraday(tmp_path, rows), 1)


def test_intraday_short_day_dropped(tmp_path, caplog):
    rows = []
    for day, n in (("01", 10), ("02", 10), ("03", 5)):
        rows += [f"2021-03-{day}T10:{i:02d},100,101,99,100" for i in range(n)]
    grids = load_intraday_csv(_intraday(tmp_path, rows), 1)
    assert [g.date.day for g in grids] == [1, 2]


def test_resample_grid():
    g = make_grid([1.0, 2.0, 3.0, 4.0, 5.0], highs=[1, 2, 3, 4, 6], lows=[0.5, 1, 2, 3, 4])
    r = resample_grid(g, 2)
    np.testing.assert_array_equal(r.close, [2.0, 4.0, 5.0])
    np.testing.assert_array_equal(r.high, [2, 4, 6])
    np.testing.assert_array_equal(r.low, [0.5, 2, 4])
    assert r.open[0] == g.open[0]
