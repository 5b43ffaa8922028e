"""Nonlinear calibration of the LPPL model on one fitting window.

The linear parameters are profiled out (see :func:`lpplci.model.cost_f1`),
leaving a 3-D search over ``(tc, beta, omega)``. The cost surface has many
local minima, so each window is searched by Nelder-Mead from several
deterministic starting points and the lowest converged cost wins.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.stats import qmc

from . import _kernels
from .errors import FitFailedError, WindowTooShortError
from .model import LpplFit, LpplParams, PriceSeries

MIN_WINDOW = 10


@dataclass(frozen=True)
class SearchConfig:
    """Search box and optimizer settings.

    ``tc`` is searched in ``[t2 + tc_lower_frac * span, t2 + tc_upper_frac * span]``
    where ``span = t2 - t1`` is the window length in trading days.
    """

    tc_lower_frac: float = 1e-3
    tc_upper_frac: float = 0.5
    beta_range: tuple[float, float] = (0.01, 1.2)
    omega_range: tuple[float, float] = (2.0, 25.0)
    n_starts: int = 6
    simplex_tol: float = 1e-12
    max_iters: int = 600
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "beta_range", tuple(float(v) for v in self.beta_range))
        object.__setattr__(self, "omega_range", tuple(float(v) for v in self.omega_range))
        if not 0 < self.tc_lower_frac < self.tc_upper_frac:
            raise ValueError("need 0 < tc_lower_frac < tc_upper_frac (tc must lie after the window)")
        if not self.beta_range[0] < self.beta_range[1]:
            raise ValueError("beta_range must be ordered low < high")
        if not self.omega_range[0] < self.omega_range[1]:
            raise ValueError("omega_range must be ordered low < high")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if not self.simplex_tol > 0:
            raise ValueError("simplex_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    def box(self, t1: float, t2: float) -> tuple[np.ndarray, np.ndarray]:
        span = t2 - t1
        lo = np.array([t2 + self.tc_lower_frac * span, self.beta_range[0], self.omega_range[0]])
        hi = np.array([t2 + self.tc_upper_frac * span, self.beta_range[1], self.omega_range[1]])
        return lo, hi

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FitOutcome:
    best: LpplFit
    all_starts: tuple[LpplFit, ...]
    n_converged: int


class SimplexResult(NamedTuple):
    x: np.ndarray
    value: float
    converged: bool
    iterations: int


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    initial: Sequence[float],
    config: SearchConfig = SearchConfig(),
    step: Sequence[float] | None = None,
) -> SimplexResult:
    """Minimize ``objective`` with the Nelder-Mead simplex method.

    The initial simplex offsets each coordinate of ``initial`` by ``step``
    (default: 5% of the coordinate, or 0.00025 where it is zero).
    Convergence means the spread of objective values over the simplex fell
    below ``config.simplex_tol``; hitting ``config.max_iters`` first returns
    the best vertex with ``converged=False``.
    """
    x0 = np.array(initial, dtype=np.float64)
    if step is None:
        step = np.where(x0 != 0, 0.05 * x0, 0.00025)
    step = np.asarray(step, dtype=np.float64)
    minimize = _kernels.with_objective(lambda x, _: float(objective(x)))
    x, fx, conv, it, _ = minimize(None, x0, step, config.simplex_tol, config.max_iters)
    return SimplexResult(np.asarray(x), float(fx), bool(conv), int(it))


@lru_cache(maxsize=64)
def _unit_starts(n_starts: int, seed: int) -> np.ndarray:
    # Scrambled Halton: the first k points are the same for any n_starts >= k.
    pts = qmc.Halton(d=3, scramble=True, seed=seed).random(n_starts)
    pts = 0.05 + 0.9 * pts
    pts.setflags(write=False)
    return pts


def start_points(series: PriceSeries, search: SearchConfig) -> np.ndarray:
    """Physical ``(tc, beta, omega)`` starting points for a window."""
    lo, hi = search.box(series.start, series.end)
    return lo + _unit_starts(search.n_starts, search.seed) * (hi - lo)


# Initial simplex edge in unit-box coordinates.
_STEP = 0.1


def _run_start(t, y, lo, hi, u0, search: SearchConfig):
    args = (t, y, lo, hi)
    step = np.where(u0 > 0.5, -_STEP, _STEP)
    u, _, conv, _, _ = _kernels.nelder_mead(args, u0, step, search.simplex_tol, search.max_iters)
    if conv:
        # One restart from the converged vertex guards against a collapsed simplex.
        u, _, conv, _, _ = _kernels.nelder_mead(args, u, 0.1 * step, search.simplex_tol, search.max_iters)
    p, _ = _kernels.box_point(u, lo, hi)
    coef, cost, _ = _kernels.linear_fit(t, y, p[0], p[1], p[2])
    return p, coef, cost, conv


def fit_window(series: PriceSeries, search: SearchConfig = SearchConfig()) -> FitOutcome:
    """Calibrate the full seven-parameter model on one window.

    Raises :class:`WindowTooShortError` below 10 observations and
    :class:`FitFailedError` when every start ends at a non-finite cost.
    """
    if len(series) < MIN_WINDOW:
        raise WindowTooShortError(f"window has {len(series)} observations, need at least {MIN_WINDOW}")
    t = np.ascontiguousarray(series.times)
    y = np.ascontiguousarray(series.log_prices)
    lo, hi = search.box(series.start, series.end)
    fits = []
    for u0 in _unit_starts(search.n_starts, search.seed):
        p, coef, cost, conv = _run_start(t, y, lo, hi, np.array(u0), search)
        finite = math.isfinite(cost)
        params = LpplParams(*(float(v) for v in p), *(float(c) for c in coef))
        fits.append(
            LpplFit(
                params=params,
                cost=float(cost) if finite else math.inf,
                window_start=series.start,
                window_end=series.end,
                converged=bool(conv and finite),
            )
        )

    converged = [f for f in fits if f.converged]
    pool = converged or [f for f in fits if math.isfinite(f.cost)]
    if not pool:
        raise FitFailedError(f"no start produced a finite cost on window [{series.start}, {series.end}]")
    # min() keeps the first of equal costs, i.e. the lowest start index.
    best = min(pool, key=lambda f: f.cost)
    return FitOutcome(best=best, all_starts=tuple(fits), n_converged=len(converged))
