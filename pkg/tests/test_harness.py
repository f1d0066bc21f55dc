import json
import textwrap
from pathlib import Path

import numpy as np
import pytest

from escaviar.errors import ConfigError, ParseError, ValidationError
from escaviar.harness import (RollingConfig, align_driver, load_config, package_data, read_forecast_csv,
                              read_loss_csv, rolling_forecast, run_config, write_forecast_csv, write_loss_csv)
from escaviar.market_data import ReturnSeries
from escaviar.model import ModelSpec
from escaviar.realized import DriverSeries
from escaviar.sim import DgpSpec, business_dates, simulate_abs_garch

FAST = dict(n_starts=40, n_refine=1)


@pytest.fixture(scope="module")
def series():
    sim = simulate_abs_garch(DgpSpec(n=260), rng_seed=2)
    return sim.returns


def test_toy_series_gives_three_records(series):
    cfg = RollingConfig(257, [ModelSpec("exp")], refit_every=1, seed=0, **FAST)
    log = rolling_forecast(cfg, series)
    fc = log.forecasts["ES-CAV-Exp"]
    assert len(fc) == 3
    assert fc.dates == series.dates[257:]
    assert list(fc.dates) == sorted(fc.dates)
    assert np.all(fc.es <= fc.var)
    assert len(log.fits["ES-CAV-Exp"]) == 3


def test_refit_schedule_and_replay(series):
    cfg = RollingConfig(250, [ModelSpec("exp"), ModelSpec("ar")], refit_every=4, seed=5, **FAST)
    a = rolling_forecast(cfg, series)
    b = rolling_forecast(cfg, series)
    for name in a.forecasts:
        assert a.forecasts[name].var.tobytes() == b.forecasts[name].var.tobytes()
        assert a.forecasts[name].es.tobytes() == b.forecasts[name].es.tobytes()
        assert len(a.fits[name]) == 3  # refits at k = 0, 4, 8 of 10


def test_single_fit_close_to_daily_refit():
    sim = simulate_abs_garch(DgpSpec(n=330), rng_seed=9)
    spec = [ModelSpec("exp")]
    daily = rolling_forecast(RollingConfig(300, spec, refit_every=1, seed=1, n_starts=200, n_refine=2), sim.returns)
    once = rolling_forecast(RollingConfig(300, spec, refit_every=30, seed=1, n_starts=200, n_refine=2), sim.returns)
    d, o = daily.forecasts["ES-CAV-Exp"].var, once.forecasts["ES-CAV-Exp"].var
    # diagnostic: agreement within estimation noise, not equality
    assert np.median(np.abs(d - o) / np.abs(d)) < 0.15


def test_rolling_validation(series):
    with pytest.raises(ValidationError):
        RollingConfig(100, [ModelSpec()])
    with pytest.raises(ValidationError):
        RollingConfig(250, [ModelSpec()], refit_every=0)
    with pytest.raises(ValidationError):
        RollingConfig(250, [ModelSpec(), ModelSpec()])
    with pytest.raises(ValidationError):
        rolling_forecast(RollingConfig(260, [ModelSpec()]), series)
    with pytest.raises(ValidationError, match="driver"):
        rolling_forecast(RollingConfig(250, [ModelSpec("exp", "rv")], **FAST), series)


def test_align_driver():
    dates = business_dates(5)
    r = ReturnSeries(dates, np.arange(5.0), "percent")
    drv = DriverSeries(dates[::-1], np.arange(5.0)[::-1] * 10, "rv")
    np.testing.assert_array_equal(align_driver(r, drv), np.arange(5.0) * 10)
    with pytest.raises(ValidationError, match=str(dates[0])):
        align_driver(r, DriverSeries(dates[1:], np.ones(4), "rv"))


def test_forecast_and_loss_csv_round_trip(series, tmp_path):
    log = rolling_forecast(RollingConfig(255, [ModelSpec("exp")], **FAST), series)
    s = log.forecasts["ES-CAV-Exp"]
    write_forecast_csv(s, tmp_path / "f.csv")
    back = read_forecast_csv(tmp_path / "f.csv")
    assert back.dates == s.dates
    np.testing.assert_array_equal(back.var, s.var)
    write_loss_csv(s, 0.01, tmp_path / "l.csv")
    dates, vals = read_loss_csv(tmp_path / "l.csv")
    assert len(dates) == len(s) and np.all(np.isfinite(vals))
    (tmp_path / "bad.csv").write_text("date,foo\n2020-01-01,1\n")
    with pytest.raises(ParseError):
        read_forecast_csv(tmp_path / "bad.csv")


def _write(tmp_path, body):
    path = tmp_path / "run.toml"
    path.write_text(textwrap.dedent(body))
    return path


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.toml")
    with pytest.raises(ParseError):
        load_config(_write(tmp_path, "[rolling\nin_sample = 3\n"))
    bad = _write(tmp_path, """
        [data]
        daily = "pkg:sample_daily.csv"
        colour = "red"
        [rolling]
        in_sample = 300
        windw = 3
        [[models]]
        kind = "exp"
    """)
    with pytest.raises(ConfigError) as info:
        load_config(bad)
    assert "data.colour" in str(info.value) and "rolling.windw" in str(info.value)
    missing = _write(tmp_path, """
        [data]
        daily = "nowhere.csv"
        [rolling]
        in_sample = 300
        [[models]]
        kind = "exp"
    """)
    with pytest.raises(ConfigError, match="nowhere.csv"):
        run_config(missing)


def test_minimal_config_runs(tmp_path, capsys):
    body = """
        [data]
        daily = "pkg:sample_daily.csv"
        [rolling]
        in_sample = 300
        refit_every = 10
        max_forecasts = 12
        seed = 3
        [estimation]
        n_starts = 40
        n_refine = 1
        [backtest]
        dq_sims = 99
        [[models]]
        kind = "exp"
        [[models]]
        kind = "ar"
        [mcs]
        statistic = ["R", "SQ"]
        reps = 1000
    """
    path = _write(tmp_path, body)
    assert run_config(path, out=tmp_path / "out") == 0
    out = tmp_path / "out"
    rows = (out / "forecasts" / "ES-CAV-Exp.csv").read_text().splitlines()
    assert len(rows) == 1 + 12
    doc = json.loads((out / "mcs.json").read_text())
    assert set(doc) == {"R", "SQ"} and doc["R"]["included"]
    assert set(json.loads((out / "backtest.json").read_text())) == {"ES-CAV-Exp", "ES-CAV-AR"}
    assert "ES-CAV-AR" in capsys.readouterr().out


def test_shipped_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    assert load_config(root / "minimal.toml")["rolling"]["max_forecasts"] == 20
    assert len(load_config(root / "compare.toml")["models"]) == 4
