"""LPPL model in its linearized form and the slaved linear subproblem.

The log-price model is

    ln p(t) = A + B (tc - t)^beta
                + C1 (tc - t)^beta cos(omega ln(tc - t))
                + C2 (tc - t)^beta sin(omega ln(tc - t))

with three nonlinear parameters ``(tc, beta, omega)`` and four linear ones
``(A, B, C1, C2)``. For fixed nonlinear parameters the linear ones follow in
closed form from 4x4 normal equations, which is what makes the calibration
a 3-D search.

Time is measured in trading-day ordinals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import DomainError, SingularSystemError


@dataclass(frozen=True)
class PriceSeries:
    """Daily price observations indexed by consecutive trading-day ordinals.

    A full series starts at ordinal 0. Sub-windows produced by
    :meth:`window` keep their absolute ordinals, so ``time_index[0]`` is the
    window start rather than 0.
    """

    time_index: np.ndarray
    dates: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        ti = np.asarray(self.time_index, dtype=np.int64)
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        prices = np.asarray(self.prices, dtype=np.float64)
        if not (ti.ndim == dates.ndim == prices.ndim == 1):
            raise ValueError("time_index, dates and prices must be 1-D")
        if not (len(ti) == len(dates) == len(prices)):
            raise ValueError("time_index, dates and prices must have equal length")
        if len(ti) < 2:
            raise ValueError("a price series needs at least 2 observations")
        if np.any(np.diff(ti) != 1):
            raise ValueError("time_index must be consecutive integers")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise ValueError("prices must be finite and strictly positive")
        for arr in (ti, dates, prices):
            arr.setflags(write=False)
        object.__setattr__(self, "time_index", ti)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "prices", prices)

    def __len__(self) -> int:
        return len(self.prices)

    @property
    def log_prices(self) -> np.ndarray:
        return np.log(self.prices)

    @property
    def times(self) -> np.ndarray:
        """Ordinals as floats, the form the model consumes."""
        return self.time_index.astype(np.float64)

    @property
    def start(self) -> int:
        return int(self.time_index[0])

    @property
    def end(self) -> int:
        return int(self.time_index[-1])

    def position(self, ordinal: int) -> int:
        pos = int(ordinal) - self.start
        if not 0 <= pos < len(self):
            raise IndexError(f"ordinal {ordinal} outside series [{self.start}, {self.end}]")
        return pos

    def window(self, start: int, end: int) -> PriceSeries:
        """Inclusive sub-series ``[start, end]`` in absolute ordinals."""
        i, j = self.position(start), self.position(end)
        if j <= i:
            raise ValueError("window end must be after window start")
        return PriceSeries(self.time_index[i : j + 1], self.dates[i : j + 1], self.prices[i : j + 1])

    def head(self, end: int) -> PriceSeries:
        """Everything up to and including ordinal ``end``."""
        return self.window(self.start, end)

    def date_of(self, ordinal: int) -> str:
        return str(self.dates[self.position(ordinal)])


@dataclass(frozen=True)
class LpplParams:
    tc: float
    beta: float
    omega: float
    A: float
    B: float
    C1: float
    C2: float

    @property
    def C(self) -> float:
        return math.hypot(self.C1, self.C2)

    @property
    def phi(self) -> float:
        """Phase in (-pi, pi]."""
        phi = math.atan2(self.C2, self.C1)
        return math.pi if phi == -math.pi else phi

    @property
    def nonlinear(self) -> tuple[float, float, float]:
        return (self.tc, self.beta, self.omega)

    @property
    def linear(self) -> tuple[float, float, float, float]:
        return (self.A, self.B, self.C1, self.C2)


@dataclass(frozen=True)
class LpplFit:
    params: LpplParams
    cost: float
    window_start: int
    window_end: int
    converged: bool

    def __post_init__(self):
        if not self.window_start < self.window_end:
            raise ValueError("window_start must precede window_end")
        if not self.cost >= 0:
            raise ValueError("cost must be non-negative")

    @property
    def window_length(self) -> int:
        return self.window_end - self.window_start + 1

    def oscillations(self) -> float:
        """Number of log-periodic cycles inside the window."""
        p = self.params
        return p.omega / (2 * math.pi) * math.log((p.tc - self.window_start) / (p.tc - self.window_end))

    def damping(self) -> float:
        """``beta |B| / (omega |C|)``; infinite when there is no oscillation."""
        p = self.params
        if p.C == 0 or p.omega == 0:
            return math.inf
        return p.beta * abs(p.B) / (p.omega * p.C)


class LinearSolution(NamedTuple):
    A: float
    B: float
    C1: float
    C2: float
    rcond: float


def _as_times(times) -> np.ndarray:
    t = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if t.ndim != 1:
        raise ValueError("times must be one-dimensional")
    return np.ascontiguousarray(t)


def _check_domain(tc: float, t: np.ndarray) -> None:
    if not np.all(t < tc):
        raise DomainError(f"model undefined for t >= tc (tc={tc}, max t={t.max()})")


def lppl_log_price(params: LpplParams, t):
    """Model log-price at time(s) ``t``; scalar in, scalar out."""
    scalar = np.ndim(t) == 0
    tt = _as_times(t)
    _check_domain(params.tc, tt)
    f, g, h = _kernels.basis(tt, float(params.tc), float(params.beta), float(params.omega))
    out = params.A + params.B * f + params.C1 * g + params.C2 * h
    return float(out[0]) if scalar else out


def basis_functions(tc: float, beta: float, omega: float, times) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Regressors ``f = (tc-t)^beta``, ``g = f cos(omega ln(tc-t))``, ``h = f sin(...)``."""
    t = _as_times(times)
    _check_domain(tc, t)
    return _kernels.basis(t, float(tc), float(beta), float(omega))


def _window_arrays(series: PriceSeries, tc: float) -> tuple[np.ndarray, np.ndarray]:
    if len(series) < 4:
        raise ValueError("the linear subproblem needs at least 4 observations")
    t = series.times
    _check_domain(tc, t)
    return t, series.log_prices


def solve_linear(tc: float, beta: float, omega: float, series: PriceSeries) -> LinearSolution:
    """Least-squares ``(A, B, C1, C2)`` at fixed ``(tc, beta, omega)``.

    ``rcond`` is the smallest-to-largest pivot ratio of the equilibrated
    Gram matrix. Raises :class:`SingularSystemError` when it falls below
    the rank tolerance.
    """
    t, y = _window_arrays(series, tc)
    coef, cost, rcond = _kernels.linear_fit(t, y, float(tc), float(beta), float(omega))
    if not rcond >= _kernels.RANK_TOL:
        raise SingularSystemError(
            f"Gram matrix rank-deficient at tc={tc}, beta={beta}, omega={omega} (rcond={rcond:.3g})", rcond
        )
    return LinearSolution(*(float(c) for c in coef), rcond=float(rcond))


def cost_f1(tc: float, beta: float, omega: float, series: PriceSeries) -> float:
    """Residual sum of squares with the linear parameters profiled out."""
    t, y = _window_arrays(series, tc)
    _, cost, rcond = _kernels.linear_fit(t, y, float(tc), float(beta), float(omega))
    if not rcond >= _kernels.RANK_TOL:
        raise SingularSystemError(f"Gram matrix rank-deficient (rcond={rcond:.3g})", rcond)
    return float(cost)


def cost_full(params: LpplParams, series: PriceSeries) -> float:
    """Residual sum of squares for an explicit full parameter set."""
    resid = series.log_prices - lppl_log_price(params, series.times)
    return float(np.dot(resid, resid))
