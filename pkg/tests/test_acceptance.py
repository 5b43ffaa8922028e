"""Acceptance criteria, one test each; the terminal summary prints a PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py``.
"""

import math
import statistics
import time

import numpy as np
import pytest

from lpplci.calibration import fit_window
from lpplci.cli import main
from lpplci.data import generate_random_walk, read_price_series, write_price_series
from lpplci.indicator import confidence_at, rally_report, scan
from lpplci.model import LpplParams, PriceSeries, cost_f1, lppl_log_price, solve_linear

from conftest import bubble_params, draw_filter_params, fixture_path, lppl_series, make_series

criterion = pytest.mark.criterion


# -- 1 -------------------------------------------------------------------------------------


@criterion(1, "linear solve matches dense least squares (1000 draws)")
def test_linear_solve_oracle(measured):
    rng = np.random.default_rng(2024)
    worst_coef = worst_cost = 0.0
    for _ in range(1000):
        n = int(rng.integers(20, 751))
        t2 = n - 1
        tc = t2 + rng.uniform(0.01, 0.5) * t2
        beta, omega = rng.uniform(0.05, 1.2), rng.uniform(2.0, 25.0)
        B = -0.5 / tc**beta  # keeps the log-price move of order one for every beta
        params = LpplParams(tc, beta, omega, 3.0, B, 0.05 * B, -0.03 * B)
        s = lppl_series(params, n, sigma=0.02, seed=int(rng.integers(2**32)))
        d = tc - s.times
        f = d**beta
        X = np.column_stack([np.ones(n), f, f * np.cos(omega * np.log(d)), f * np.sin(omega * np.log(d))])
        oracle, *_ = np.linalg.lstsq(X, s.log_prices, rcond=None)
        got = np.array(solve_linear(tc, beta, omega, s)[:4])
        worst_coef = max(worst_coef, float(np.max(np.abs(got - oracle) / np.abs(oracle))))
        r = s.log_prices - X @ oracle
        worst_cost = max(worst_cost, abs(cost_f1(tc, beta, omega, s) - r @ r) / (r @ r))
    measured(f"max coef rel err {worst_coef:.1e}, max cost rel err {worst_cost:.1e}")
    assert worst_coef <= 1e-6
    assert worst_cost <= 1e-8


# -- 2, 3 ----------------------------------------------------------------------------------


def recovery_errors(n_draws, sigma, seed):
    rng = np.random.default_rng(seed)
    errs = []
    for k in range(n_draws):
        n, truth = draw_filter_params(rng, sign=1 if k % 2 else -1)
        fit = fit_window(lppl_series(truth, n, sigma, seed=k)).best.params
        errs.append(
            dict(
                tc=abs(fit.tc - truth.tc),
                beta=abs(fit.beta - truth.beta),
                omega=abs(fit.omega - truth.omega),
                A=abs(fit.A - truth.A),
                B=abs(fit.B - truth.B),
                sign_ok=math.copysign(1, fit.B) == math.copysign(1, truth.B),
            )
        )
    return errs


@criterion(2, "noiseless parameter recovery (50 draws, both signs)")
def test_noiseless_recovery(measured):
    start = time.perf_counter()
    errs = recovery_errors(50, 0.0, seed=7)
    elapsed = time.perf_counter() - start
    worst = {k: max(e[k] for e in errs) for k in ("tc", "beta", "omega", "A", "B")}
    measured(", ".join(f"max d{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.0f} s")
    assert worst["tc"] <= 0.5
    assert worst["beta"] <= 0.01
    assert worst["omega"] <= 0.05
    assert worst["A"] <= 1e-3 and worst["B"] <= 1e-3
    assert elapsed < 60


@criterion(3, "noisy parameter recovery, sigma = 0.01 (medians over 50 draws)")
def test_noisy_recovery(measured):
    errs = recovery_errors(50, 0.01, seed=8)
    med = {k: statistics.median(e[k] for e in errs) for k in ("tc", "beta", "omega")}
    measured(f"median dtc {med['tc']:.2f}, dbeta {med['beta']:.3f}, domega {med['omega']:.2f}")
    assert med["tc"] <= 5
    assert med["beta"] <= 0.1
    assert med["omega"] <= 0.5


# -- 4 -------------------------------------------------------------------------------------


@criterion(4, "CI sign discrimination at the final date")
def test_sign_discrimination(measured):
    out = []
    for sign in (+1, -1):
        s = lppl_series(bubble_params(800, sign), 800, sigma=0.002, seed=1)
        out.append(confidence_at(s, 799))
    neg, pos = out
    measured(f"negative bubble neg/pos {neg.neg_ci:.2f}/{neg.pos_ci:.2f}, positive bubble {pos.neg_ci:.2f}/{pos.pos_ci:.2f}")
    assert neg.neg_ci >= 0.95 and neg.pos_ci <= 0.05
    assert pos.pos_ci >= 0.95 and pos.neg_ci <= 0.05


# -- 5 -------------------------------------------------------------------------------------


@criterion(5, "false-positive floor on 20 GBM walks (t2 step 50)")
def test_false_positive_floor(measured):
    neg, pos = [], []
    for seed in range(20):
        walk = generate_random_walk(1250, 3e-4, 0.02, seed=1000 + seed)
        res = scan(walk, t2_step=50, workers=0)
        assert not res.gaps
        neg.extend(res.neg_ci)
        pos.extend(res.pos_ci)
    mneg, mpos = float(np.median(neg)), float(np.median(pos))
    measured(f"median neg_ci {mneg:.3f}, pos_ci {mpos:.3f}, mean {np.mean(neg):.3f}/{np.mean(pos):.3f} over {len(neg)} dates")
    assert mneg <= 0.05 and mpos <= 0.05


# -- 6 -------------------------------------------------------------------------------------


def embedded_negative_bubble() -> PriceSeries:
    """Random walk for 200 days, a negative bubble with tc = 500 over days 200..499, then a rebound walk."""
    tc = 500.0
    beta, omega, damping = 0.5, 9.0, 1.5
    B = 0.8 / (300**beta - 1)
    C = beta * B / (omega * damping)
    params = LpplParams(tc, beta, omega, 0.0, B, C * math.cos(1.0), C * math.sin(1.0))
    bubble = lppl_log_price(params, np.arange(200.0, 500.0))
    pre = generate_random_walk(200, 0.0, 0.01, seed=61).log_prices
    post = generate_random_walk(301, 1e-3, 0.01, seed=62).log_prices
    logp = np.concatenate([pre - pre[-1] + bubble[0], bubble, post[1:] - post[0] + bubble[-1] + 0.01])
    logp += np.random.default_rng(63).normal(0, 0.01, len(logp))
    return make_series(logp)


@criterion(6, "critical-time localization within 20 days of day 500")
def test_tc_localization(measured):
    s = embedded_negative_bubble()
    res = scan(s, 300, 700, 5, workers=0)
    best = int(res.t2[int(np.argmax(res.neg_ci))])
    measured(f"argmax day {best}, neg_ci {res.neg_ci.max():.2f}")
    assert abs(best - 500) <= 20


# -- 7, 8 ----------------------------------------------------------------------------------

TABLE_1 = {
    # ticker: (scan range, bottom date, bottom price, rally size %, report threshold)
    "TSLA": (("2017-07-11", "2021-02-09"), "2019-06-03", 35.7, 404.0, 0.3),
    "GME": (("2016-09-01", "2021-08-31"), "2019-08-15", 3.21, 108.0, 0.3),
    "KOSS": (("2016-09-06", "2021-09-03"), "2020-04-03", 0.82, 7705.0, 0.15),
    "AMC": (("2016-09-01", "2021-08-31"), "2020-04-13", 2.08, 210.0, 0.2),
}

_scans: dict = {}


def fixture_scan(ticker):
    if ticker not in _scans:
        series = read_price_series(fixture_path(ticker))
        lo, hi = (np.datetime64(d) for d in TABLE_1[ticker][0])
        keep = (series.dates >= lo) & (series.dates <= hi)
        series = PriceSeries(np.arange(keep.sum()), series.dates[keep], series.prices[keep])
        _scans[ticker] = (series, scan(series, workers=0))
    return _scans[ticker]


@criterion(7, "Table 1 rally sizes and bottom dates on archived fixtures")
def test_table_1_rallies(measured):
    for ticker in TABLE_1:
        fixture_path(ticker)
    failures = []
    for ticker, (_, bottom_date, _, size, threshold) in TABLE_1.items():
        series, ci = fixture_scan(ticker)
        want = int(np.searchsorted(series.dates, np.datetime64(bottom_date)))
        records = rally_report(series, ci, threshold=threshold)
        near = [r for r in records if abs(series.position(r.bottom_index) - want) <= 3]
        hit = any(abs(r.rally_size_pct - size) <= 2 for r in near)
        got = ", ".join(f"{r.bottom_date} {r.rally_size_pct:.0f}%" for r in near) or "no record near bottom"
        measured(f"{ticker}: {got}")
        if not hit:
            failures.append(ticker)
    assert not failures, failures


@criterion(8, "GME neg_ci global maximum falls in 2019-06..2019-12 (magnitude reported)")
def test_gme_ci_peak(measured):
    series, ci = fixture_scan("GME")
    k = int(np.argmax(ci.neg_ci))
    measured(f"max neg_ci {ci.neg_ci[k]:.2f} on {ci[k].eval_date}")
    assert "2019-06-01" <= ci[k].eval_date <= "2019-12-31"


# -- 9 -------------------------------------------------------------------------------------


@criterion(9, "scan output byte-identical across runs and worker counts")
def test_cli_determinism(tmp_path, measured):
    prices = tmp_path / "walk.csv"
    write_price_series(generate_random_walk(500, 2e-4, 0.02, seed=90), prices)
    outputs = {}
    for name, workers in (("a", "1"), ("b", "1"), ("c", "2")):
        for ext in ("csv", "json"):
            out = tmp_path / f"{name}.{ext}"
            argv = ["-q", "scan", "--input", str(prices), "--seed", "4", "--workers", workers, "--output", str(out)]
            assert main(argv) == 0
            outputs[name, ext] = out.read_bytes()
    n_dates = len(outputs["a", "csv"].splitlines()) - 1
    measured(f"{n_dates} dates, workers 1/1/2")
    for ext in ("csv", "json"):
        assert outputs["a", ext] == outputs["b", ext] == outputs["c", ext]


# -- 10 ------------------------------------------------------------------------------------


@criterion(10, "full default scan of 1250 points < 600 s, median fit_window < 200 ms")
def test_performance(measured):
    s = lppl_series(bubble_params(1250, +1, lead=40.0), 1250, sigma=0.02, seed=10)
    fit_window(s.window(0, 200))  # warm the compiled kernels
    times = []
    for k in range(40):
        length = 125 + 25 * (k % 26)
        w = s.window(1249 - length, 1248)
        t0 = time.perf_counter()
        fit_window(w)
        times.append(time.perf_counter() - t0)
    median_ms = statistics.median(times) * 1e3
    t0 = time.perf_counter()
    res = scan(s, workers=0)
    total = time.perf_counter() - t0
    measured(f"{len(res)} dates in {total:.0f} s, median fit {median_ms:.0f} ms")
    assert len(res) >= 225 and not res.gaps
    assert total < 600
    assert median_ms < 200
