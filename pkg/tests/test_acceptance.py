"""Acceptance criteria, one test per criterion at the stated tolerance.

Each test records a PASS/FAIL line that the terminal summary prints under
"acceptance criteria".
"""

import time

import numpy as np
import pytest
from scipy.stats import norm

from conftest import random_grid, record_criterion
from escaviar.estimate import McmcConfig
from escaviar.evaluation import ForecastSeries, christoffersen_cc, dq_test, kupiec_uc, mcs, vqr_test
from escaviar.evaluation.backtests import hits
from escaviar.harness import RollingConfig, package_data, rolling_forecast
from escaviar.market_data import ReturnSeries, load_daily_csv, log_returns
from escaviar.model import InitPolicy, ModelSpec, RiskPath, al_log_likelihood, in_region, joint_score, risk_path
from escaviar.realized import (DriverSeries, load_measures_csv, realized_range, realized_variance, subsampled_rr,
                               subsampled_rv)
from escaviar.sim import (DgpSpec, business_dates, map_true_betas, run_replication_study, simulate_abs_garch,
                          solve_true_gamma_exp, true_var_es)

ALPHA = 0.01


def test_criterion_1_true_beta_mapping():
    t0 = time.perf_counter()
    betas = map_true_betas(DgpSpec(0.02, 0.10, 0.85), ALPHA)
    elapsed = time.perf_counter() - t0
    rounded = tuple(round(float(b), 4) for b in betas)
    passed = rounded == (-0.0465, -0.2326, 0.8500) and elapsed < 1.0
    record_criterion(1, "true beta mapping", passed, f"{rounded} in {elapsed * 1e3:.2f} ms")
    assert passed


def test_criterion_2_exp_true_gamma():
    sim = simulate_abs_garch(DgpSpec(n=1905, driver=np.sqrt(load_measures_csv(package_data("synthetic_rv.csv"))
                                                            ["RV"].values)), rng_seed=0)
    g = solve_true_gamma_exp(true_var_es(sim.sd, ALPHA, sim.sd_next))
    passed = abs(g - -1.926) <= 0.001
    record_criterion(2, "Exp true gamma0", passed, f"{g:.5f} (reference -1.9264)")
    assert passed


@pytest.mark.slow
def test_criterion_3_expx_replication():
    t0 = time.perf_counter()
    table = run_replication_study("expx", 100, estimators=("mcmc",), rng_seed=2024, mcmc_config=McmcConfig.desk())
    minutes = (time.perf_counter() - t0) / 60
    rows = list(table.rows)
    b2 = table.mean["mcmc"][rows.index("beta2")]
    iv = rows.index("VaR_next")
    var_mean, var_true = table.mean["mcmc"][iv], table.true[iv]
    var_rmse = table.rmse["mcmc"][iv]
    # a mild downward bias in beta2: mean within 0.05 of 0.85 and below it
    ok_b2 = 0.80 <= b2 < 0.85
    ok_var = abs(var_mean - var_true) <= 0.06
    ok_rmse = var_rmse < 0.20
    passed = ok_b2 and ok_var and ok_rmse and table.n_failed["mcmc"] <= 5
    record_criterion(3, "ES-CAViaR-Exp-X desk replication", passed,
                     f"beta2 mean {b2:.4f}; VaR mean {var_mean:.4f} vs true {var_true:.4f}; VaR RMSE {var_rmse:.4f}; "
                     f"failed {table.n_failed['mcmc']}; {minutes:.1f} min on 1 core")
    assert passed


def test_criterion_4_identity_suite():
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(20, 200))
        r = rng.standard_normal(n) * rng.uniform(0.5, 2.0)
        q = -np.abs(rng.normal(2.0, 0.5, n))
        es = q - np.abs(rng.normal(0.4, 0.2, n)) - 1e-3
        path = RiskPath(q, es, q[-1], es[-1])
        worst = max(worst, abs(al_log_likelihood(path, r, ALPHA) + np.sum(joint_score(r, q, es, ALPHA))))
    ok_ll = worst <= 1e-10

    sim = simulate_abs_garch(DgpSpec(n=500), rng_seed=4)
    crossed, drawn = 0, 0
    while drawn < 1000:
        theta = np.concatenate([[rng.uniform(-0.5, 0.0), rng.uniform(-0.5, 0.0), rng.uniform(-0.99, 0.99)],
                                rng.uniform(0.0, 1.0, 3)])
        if not in_region("ar", theta):
            continue
        drawn += 1
        p = risk_path(ModelSpec("ar"), theta, sim.returns, sim.driver, InitPolicy())
        crossed += int(np.any(p.es > p.q) or p.es_next > p.q_next)
    ok_cross = crossed == 0

    mismatch = 0
    for _ in range(200):
        g = random_grid(rng, n_bars=int(rng.integers(2, 80)))
        mismatch += int(subsampled_rv(g, 1, 1) != realized_variance(g) or subsampled_rr(g, 1, 1) != realized_range(g))
    ok_ss = mismatch == 0
    passed = ok_ll and ok_cross and ok_ss
    record_criterion(4, "estimator identities", passed,
                     f"max |LL + sum S| = {worst:.2e}; AR crossings {crossed}/1000; SS n_k=1 mismatches {mismatch}/200")
    assert passed


def test_criterion_5_joint_score_consistency():
    r = np.random.default_rng(5).standard_normal(1_000_000)
    step = 0.01
    q_grid = np.round(np.arange(-2.60, -2.0 + 1e-9, step), 10)
    es_grid = np.round(np.arange(-3.00, -2.35 + 1e-9, step), 10)
    # mean score = -log((a - 1)/es) - M(q)/(a es), M(q) = mean (r - q)(a - I(r <= q))
    m = np.array([np.mean((r - q) * (ALPHA - (r <= q))) for q in q_grid])
    E = es_grid[None, :]
    surface = -np.log((ALPHA - 1) / E) - m[:, None] / (ALPHA * E)
    i, j = np.unravel_index(np.argmin(surface), surface.shape)
    # the decomposition reproduces the direct mean score
    for a, b in ((i, j), (0, 0), (len(q_grid) - 1, len(es_grid) - 1)):
        direct = np.mean(joint_score(r, q_grid[a], es_grid[b], ALPHA))
        assert direct == pytest.approx(surface[a, b], rel=1e-10)
    z = norm.ppf(ALPHA)
    true_q, true_es = z, -norm.pdf(z) / ALPHA
    dq, des = abs(q_grid[i] - true_q), abs(es_grid[j] - true_es)
    passed = dq <= step + 1e-12 and des <= step + 1e-12
    record_criterion(5, "joint score grid minimizer", passed,
                     f"argmin ({q_grid[i]:.2f}, {es_grid[j]:.2f}) vs ({true_q:.4f}, {true_es:.4f})")
    assert passed


def test_criterion_6_backtest_size_and_kupiec():
    n, trials = 2000, 2000
    z = norm.ppf(ALPHA)
    dates = business_dates(n)
    rng = np.random.default_rng(606)
    seeds = np.random.SeedSequence(607).spawn(trials)
    rejections = {"UC": 0, "CC": 0, "DQ1": 0, "DQ4": 0, "VQR": 0}
    skipped = 0
    for k in range(trials):
        sd = np.exp(0.4 * np.sin(2 * np.pi * np.arange(n) / 250 + rng.uniform(0, 6.3)) + 0.2 * rng.standard_normal(n))
        r = sd * rng.standard_normal(n)
        s = ForecastSeries(dates, r, sd * z, -sd * norm.pdf(z) / ALPHA)
        h = hits(r, s.var)
        rejections["UC"] += kupiec_uc(int(h.sum()), n, ALPHA).rejected
        rejections["CC"] += christoffersen_cc(h, ALPHA).rejected
        s1, s4 = seeds[k].spawn(2)
        d1, d4 = dq_test(s, 1, ALPHA, rng_seed=s1), dq_test(s, 4, ALPHA, rng_seed=s4)
        skipped += d1.skipped + d4.skipped
        rejections["DQ1"] += d1.rejected
        rejections["DQ4"] += d4.rejected
        rejections["VQR"] += vqr_test(s, ALPHA).rejected
    sizes = {k: v / trials for k, v in rejections.items()}
    ok_size = all(0.03 <= v <= 0.07 for v in sizes.values())
    lr = kupiec_uc(31, 2113, ALPHA)
    ok_kupiec = lr.statistic > 3.841 and lr.rejected
    passed = ok_size and ok_kupiec
    detail = ", ".join(f"{k} {100 * v:.2f}%" for k, v in sizes.items())
    record_criterion(6, "backtest calibration", passed,
                     f"size {detail} (DQ skipped {skipped}); Kupiec LR(31/2113) = {lr.statistic:.4f}")
    assert passed


def test_criterion_7_mcs_dominance():
    wins = {"R": 0, "SQ": 0}
    runs = 200
    for k in range(runs):
        rng = np.random.default_rng(np.random.SeedSequence(700).spawn(runs)[k])
        losses = rng.standard_normal((250, 3))
        losses[:, 2] += 10.0
        for stat in wins:
            res = mcs(losses, stat, confidence=0.90, reps=1000, block_len=10, rng_seed=k,
                      names=["m0", "m1", "dominated"])
            wins[stat] += "dominated" in res.eliminated
    rates = {k: v / runs for k, v in wins.items()}
    passed = all(v >= 0.95 for v in rates.values())
    record_criterion(7, "MCS eliminates dominated model", passed,
                     f"R {100 * rates['R']:.1f}%, SQ {100 * rates['SQ']:.1f}% of {runs} runs")
    assert passed


def test_criterion_8_no_look_ahead():
    returns = log_returns(load_daily_csv(package_data("sample_daily.csv")))
    returns = returns.window(0, 300)
    rv = load_measures_csv(package_data("synthetic_rv.csv"))["RV"]
    drivers = {"rv": DriverSeries(rv.dates, np.sqrt(rv.values), "rv")}
    models = [ModelSpec(k, d) for k in ("ar", "exp") for d in ("absret", "rv")]
    cfg = RollingConfig(250, models, refit_every=1, seed=8, n_starts=60, n_refine=1)
    base = rolling_forecast(cfg, returns, drivers)
    changed_later, broken = 0, []
    for k in (0, 24, 49):
        t = 250 + k
        values = returns.values.copy()
        values[t] = values[t] - 25.0
        mutated = rolling_forecast(cfg, ReturnSeries(returns.dates, values, returns.unit), drivers)
        for name in base.forecasts:
            a, b = base.forecasts[name], mutated.forecasts[name]
            if a.var[: k + 1].tobytes() != b.var[: k + 1].tobytes() or a.es[: k + 1].tobytes() != b.es[: k + 1].tobytes():
                broken.append((name, k))
            changed_later += int(k < 49 and not np.array_equal(a.var[k + 1:], b.var[k + 1:]))
    passed = not broken and changed_later > 0
    record_criterion(8, "no look-ahead in rolling forecasts", passed,
                     f"{len(base.forecasts)} models x 50 days; day-t forecasts bit-identical after mutating r_t "
                     f"({'ok' if not broken else broken}); later forecasts move in {changed_later} cases")
    assert passed
