import math
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from escaviar.errors import DomainError, ScalingError, ValidationError
from escaviar.market_data import FOUR_LOG2
from escaviar.realized import (RealizedSeries, ScalingWindow, compute_measures, driver_from_measure,
                               load_measures_csv, realized_range, realized_variance, scaled_measure, subsampled_rr,
                               subsampled_rv, write_measures_csv)

from conftest import make_grid, random_grid


def _series(values, kind="RV"):
    values = np.asarray(values, dtype=float)
    dates = tuple(date.fromordinal(738000 + i) for i in range(values.size))
    return RealizedSeries(dates, values, kind, 5)


def test_rv_examples():
    p0 = 100.0
    g = make_grid([p0 * math.exp(0.01), p0 * math.exp(-0.01)], open0=p0)
    assert realized_variance(g) == pytest.approx(0.0005, rel=1e-12)
    assert realized_variance(make_grid([50.0, 50.0, 50.0])) == 0.0
    assert realized_variance(make_grid([p0 * math.exp(0.03)], open0=p0)) == pytest.approx(0.0009, rel=1e-12)


def test_rr_examples():
    assert realized_range(make_grid([3.0, 3.0], highs=[3, 3], lows=[3, 3])) == 0.0
    assert round(realized_range(make_grid([2.0], highs=[math.e], lows=[1.0])), 5) == 0.36067
    g = make_grid([1.0, 1.0], highs=[math.exp(0.02)] * 2, lows=[1.0, 1.0])
    assert float(f"{realized_range(g):.4g}") == 2.885e-4


def test_rr_bad_bar():
    g = make_grid([1.0], highs=[1.0], lows=[1.0])
    object.__setattr__(g, "high", np.array([0.5]))
    with pytest.raises(DomainError):
        realized_range(g)


def test_scaled_examples():
    c = np.full(6, 0.3)
    out = scaled_measure(_series(c), _series(c, "r2"), ScalingWindow(2))
    np.testing.assert_allclose(out.values, c[2:])
    out = scaled_measure(_series(np.ones(5)), _series(np.full(5, 2.0), "r2"), ScalingWindow(2))
    np.testing.assert_allclose(out.values, 2.0)
    out = scaled_measure(_series([0.0002, 0.0003]), _series([0.0004, 0.0]), ScalingWindow(1))
    assert out.values[0] == pytest.approx(0.0006, rel=1e-12)
    assert len(out) == 1 and out.kind == "ScRV"


def test_scaled_zero_sum_names_date():
    hf = _series([0.0, 0.0, 1.0])
    with pytest.raises(ScalingError, match=str(hf.dates[1])):
        scaled_measure(hf, _series([1.0, 1.0, 1.0], "r2"), ScalingWindow(1))


def test_scaled_identity_on_defined_range(rng):
    v = rng.uniform(0.1, 2.0, 100)
    out = scaled_measure(_series(v), _series(v, "r2"), ScalingWindow(66))
    np.testing.assert_allclose(out.values, v[66:], rtol=1e-12)


def _brute_ssrv(logp, n_k):
    vals = []
    for i in range(n_k):
        pts = logp[i::n_k]
        if len(pts) >= 2:
            vals.append(sum((pts[j + 1] - pts[j]) ** 2 for j in range(len(pts) - 1)))
    return sum(vals) / len(vals)


def _brute_ssrr(lh, ll, n_k):
    vals = []
    n = len(lh)
    for i in range(n_k):
        if i + n_k > n:
            continue
        total, m = 0.0, 0
        while i + m * n_k < n:
            block = slice(i + m * n_k, min(i + (m + 1) * n_k, n))
            total += (max(lh[block]) - min(ll[block])) ** 2
            m += 1
        vals.append(total)
    return sum(vals) / (FOUR_LOG2 * len(vals))


def test_subsampled_linear_path():
    s = 0.001
    closes = 100 * np.exp(s * np.arange(1, 11))
    g = make_grid(closes, open0=100.0)
    logp = np.log(np.concatenate([[100.0], closes]))
    assert subsampled_rv(g, 5, 1) == pytest.approx(_brute_ssrv(logp, 5), rel=1e-12)


def test_subsampled_brute_force(rng):
    for _ in range(20):
        g = random_grid(rng, n_bars=10)
        logp = np.log(np.concatenate([[g.open[0]], g.close]))
        assert subsampled_rv(g, 5, 1) == pytest.approx(_brute_ssrv(logp, 5), rel=1e-12)
        assert subsampled_rr(g, 5, 1) == pytest.approx(_brute_ssrr(np.log(g.high), np.log(g.low), 5), rel=1e-12)


def test_subsampled_constant_zero():
    g = make_grid(np.full(10, 7.0), highs=np.full(10, 7.0), lows=np.full(10, 7.0))
    assert subsampled_rv(g, 5, 1) == 0.0
    assert subsampled_rr(g, 5, 1) == 0.0


def test_subsampled_degenerate_and_errors():
    g = make_grid([1.0, 1.1, 1.2])
    with pytest.raises(ValidationError):
        subsampled_rv(g, 5, 2)
    with pytest.raises(DomainError):
        subsampled_rv(make_grid([1.0]), 5, 1)


def test_nk1_equals_plain(rng):
    for _ in range(50):
        g = random_grid(rng)
        assert subsampled_rv(g, 1, 1) == realized_variance(g)
        assert subsampled_rr(g, 1, 1) == realized_range(g)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1000.0))
def test_measures_price_scale_invariant(seed, k):
    g = random_grid(np.random.default_rng(seed), n_bars=20)
    gk = make_grid(g.close * k, g.high * k, g.low * k, open0=g.open[0] * k)
    assert realized_variance(gk) == pytest.approx(realized_variance(g), rel=1e-8, abs=1e-15)
    assert realized_range(gk) == pytest.approx(realized_range(g), rel=1e-8, abs=1e-15)
    assert subsampled_rr(gk, 5, 1) == pytest.approx(subsampled_rr(g, 5, 1), rel=1e-8, abs=1e-15)


def test_driver_from_measure():
    d = driver_from_measure(_series([0.0004, 0.0, 4.0]))
    np.testing.assert_allclose(d.values, [0.02, 0.0, 2.0])
    assert d.kind == "rv"


def test_compute_measures_and_csv(rng, tmp_path):
    grids, prev = [], None
    for i in range(80):
        g = random_grid(rng, n_bars=30)
        grids.append(make_grid(g.close, g.high, g.low, open0=g.open[0], day=date.fromordinal(738000 + i),
                               prev_close=prev))
        prev = g.close[-1]
    out = compute_measures(grids, interval=5, subsample=1, q=10)
    assert set(out) == {"RV", "RR", "ScRV", "ScRR", "SSRV", "SSRR"}
    assert len(out["RV"]) == 80 and len(out["ScRV"]) == 79 - 10
    assert np.all(out["SSRR"].values >= 0)
    np.testing.assert_allclose(out["RV"].values[0], 1e4 * realized_variance(grids[0].__class__(
        grids[0].date, 5, grids[0].timestamps[::5], grids[0].open[::5], grids[0].high[::5], grids[0].low[::5],
        grids[0].close[4::5], None)), rtol=1e-12)
    path = tmp_path / "m.csv"
    write_measures_csv(out, path)
    back = load_measures_csv(path)
    for k in out:
        np.testing.assert_array_equal(back[k].values, out[k].values)
        assert back[k].dates == out[k].dates
