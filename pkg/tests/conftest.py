from __future__ import annotations

import math
import os
from pathlib import Path

import numpy as np
import pytest

from lpplci.data import trading_days
from lpplci.model import LpplParams, PriceSeries, lppl_log_price

FIXTURE_DIR = Path(os.environ.get("LPPL_FIXTURE_DIR", Path(__file__).parent / "fixtures" / "yahoo"))


def make_series(log_prices, start_date=None) -> PriceSeries:
    logp = np.asarray(log_prices, dtype=float)
    n = len(logp)
    dates = trading_days(n) if start_date is None else trading_days(n, start_date)
    return PriceSeries(np.arange(n), dates, np.exp(logp))


def lppl_series(params: LpplParams, n: int, sigma: float = 0.0, seed: int = 0) -> PriceSeries:
    logp = lppl_log_price(params, np.arange(n, dtype=float))
    if sigma:
        logp = logp + np.random.default_rng(seed).normal(0, sigma, n)
    return make_series(logp)


def bubble_params(n: int, sign: int, lead: float = 10.0, beta=0.5, omega=9.0, move=0.8, damping=1.5, phase=1.0, A=3.0):
    """Parameters of a clean bubble over days 0..n-1 that passes the default filters.

    ``sign = +1`` gives B > 0 (negative bubble), ``-1`` gives B < 0.
    ``move`` is the total log-price change carried by the power law.
    """
    tc = n - 1 + lead
    B = sign * move / (tc**beta - lead**beta)
    C = beta * abs(B) / (omega * damping)
    return LpplParams(tc, beta, omega, A, B, C * math.cos(phase), C * math.sin(phase))


def draw_filter_params(rng: np.random.Generator, sign: int | None = None):
    """Random window length and parameters strictly inside the default filter box."""
    while True:
        n = int(rng.integers(200, 501))
        t2 = n - 1
        tc = t2 + rng.uniform(0.03, 0.2) * t2
        beta = rng.uniform(0.2, 0.8)
        omega = rng.uniform(6.0, 13.0)
        s = sign if sign is not None else (1 if rng.random() < 0.5 else -1)
        B = s * rng.uniform(0.3, 1.0) / (tc**beta - (tc - t2) ** beta)
        C = beta * abs(B) / (omega * rng.uniform(1.0, 2.0))
        phi = rng.uniform(-math.pi, math.pi)
        params = LpplParams(tc, beta, omega, 4.0, B, C * math.cos(phi), C * math.sin(phi))
        if omega / (2 * math.pi) * math.log(tc / (tc - t2)) >= 2.5:
            return n, params


def fixture_path(ticker: str) -> Path:
    path = FIXTURE_DIR / f"{ticker}.csv"
    if not path.exists():
        pytest.fail(
            f"archived Yahoo export {path} is missing; the sandbox cannot download it "
            f"(set LPPL_FIXTURE_DIR to a directory holding {ticker}.csv)",
            pytrace=False,
        )
    return path


# -- one pass/fail line per acceptance criterion -----------------------------------

_acceptance: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        notes = "; ".join(v for k, v in item.user_properties if k == "measured")
        _acceptance[f"{number:>2}"] = ("PASS" if report.passed else "FAIL", title, notes)


@pytest.fixture
def measured(request):
    """Attach a measured value to the acceptance summary line of the running test."""

    def note(text: str) -> None:
        request.node.user_properties.append(("measured", text))

    return note


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        status, title, notes = _acceptance[number]
        line = f"criterion {number}: {status}  {title}"
        terminalreporter.write_line(f"{line}  [{notes}]" if notes else line)
