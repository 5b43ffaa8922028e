"""Multi-window LPPL confidence indicators and rally statistics.

For an evaluation date ``t2`` the model is calibrated on a family of windows
``[t2 - L + 1, t2]`` of decreasing length ``L``. Each calibration is either
rejected by the filter conditions or counted as evidence of a positive
(``B < 0``) or negative (``B > 0``) bubble. The indicators are the fractions
of windows counted for each sign.
"""

from __future__ import annotations

import enum
import logging
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .calibration import SearchConfig, fit_window
from .errors import FitFailedError, InsufficientHistoryError, LpplError
from .model import LpplFit, PriceSeries

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterConfig:
    """Bounds a calibration must satisfy to count toward the indicator.

    ``tc_window_frac = (lo, hi)`` requires ``lo * span < tc - t2 <= hi * span``
    with ``span = t2 - t1``. Oscillations are
    ``omega / (2 pi) * ln((tc - t1) / (tc - t2))``; damping is
    ``beta |B| / (omega |C|)`` and is only checked when ``|C| > 0``.
    """

    beta_bounds: tuple[float, float] = (0.01, 1.2)
    omega_bounds: tuple[float, float] = (2.0, 25.0)
    tc_window_frac: tuple[float, float] = (0.0, 0.2)
    min_oscillations: float = 2.5
    damping_min: float = 0.8
    require_beta_in_unit: bool = False

    def __post_init__(self):
        for name in ("beta_bounds", "omega_bounds", "tc_window_frac"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not lo < hi:
                raise ValueError(f"{name} must be ordered low < high, got ({lo}, {hi})")
            object.__setattr__(self, name, (lo, hi))
        if not self.min_oscillations >= 0:
            raise ValueError("min_oscillations must be >= 0")
        if not self.damping_min >= 0:
            raise ValueError("damping_min must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WindowSchedule:
    min_len: int = 125
    max_len: int = 750
    step: int = 25

    def __post_init__(self):
        if self.min_len < 10:
            raise ValueError("min_len must be >= 10")
        if self.max_len < self.min_len:
            raise ValueError("max_len must be >= min_len")
        if self.step < 1:
            raise ValueError("step must be >= 1")

    @property
    def n_windows(self) -> int:
        return (self.max_len - self.min_len) // self.step + 1

    def lengths(self, available: int | None = None) -> list[int]:
        """Window lengths, longest first, optionally capped at ``available`` observations."""
        out = [self.min_len + k * self.step for k in range(self.n_windows)]
        if available is not None:
            out = [n for n in out if n <= available]
        return out[::-1]

    def to_dict(self) -> dict:
        return asdict(self)


class Qualification(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    REJECTED = "rejected"


def passes_filter(fit: LpplFit, filt: FilterConfig) -> bool:
    """All sign-independent filter conditions."""
    if not fit.converged:
        return False
    p = fit.params
    span = fit.window_end - fit.window_start
    if not filt.beta_bounds[0] <= p.beta <= filt.beta_bounds[1]:
        return False
    if filt.require_beta_in_unit and not 0 < p.beta < 1:
        return False
    if not filt.omega_bounds[0] <= p.omega <= filt.omega_bounds[1]:
        return False
    lead = p.tc - fit.window_end
    if not filt.tc_window_frac[0] * span < lead <= filt.tc_window_frac[1] * span:
        return False
    if not fit.oscillations() >= filt.min_oscillations:
        return False
    if p.C > 0 and not fit.damping() >= filt.damping_min:
        return False
    return True


def qualify_fit(fit: LpplFit, filt: FilterConfig) -> Qualification:
    if not passes_filter(fit, filt):
        return Qualification.REJECTED
    if fit.params.B < 0:
        return Qualification.POSITIVE
    if fit.params.B > 0:
        return Qualification.NEGATIVE
    return Qualification.REJECTED


@dataclass(frozen=True)
class ConfidencePoint:
    eval_date: str
    t2_index: int
    pos_ci: float
    neg_ci: float
    n_windows: int
    n_pos_qualified: int
    n_neg_qualified: int


@dataclass
class ConfidenceSeries:
    points: list[ConfidencePoint] = field(default_factory=list)
    # (t2_index, reason) for dates where no point could be computed.
    gaps: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    @property
    def t2(self) -> np.ndarray:
        return np.array([p.t2_index for p in self.points], dtype=np.int64)

    @property
    def pos_ci(self) -> np.ndarray:
        return np.array([p.pos_ci for p in self.points])

    @property
    def neg_ci(self) -> np.ndarray:
        return np.array([p.neg_ci for p in self.points])


# -- window fitting, in-process or across worker processes -------------------

_worker_state: dict = {}


def _init_worker(series: PriceSeries, search: SearchConfig) -> None:
    _worker_state["series"] = series
    _worker_state["search"] = search


def _fit_task(task: tuple[int, int]) -> tuple[int, int, LpplFit | None, str | None]:
    t2, length = task
    series = _worker_state["series"]
    try:
        window = series.window(t2 - length + 1, t2)
        return t2, length, fit_window(window, _worker_state["search"]).best, None
    except LpplError as exc:
        return t2, length, None, f"{type(exc).__name__}: {exc}"


def _run_tasks(series, search, tasks, workers):
    if workers <= 1 or len(tasks) < 2:
        _init_worker(series, search)
        try:
            return [_fit_task(t) for t in tasks]
        finally:
            _worker_state.clear()
    chunk = max(1, len(tasks) // (workers * 8))
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(series, search)) as pool:
        return list(pool.map(_fit_task, tasks, chunksize=chunk))


def _resolve_workers(workers: int | None) -> int:
    if workers is None:
        return 1
    if workers <= 0:
        return os.cpu_count() or 1
    return workers


def _window_tasks(series: PriceSeries, t2: int, schedule: WindowSchedule) -> list[tuple[int, int]]:
    series.position(t2)
    available = t2 - series.start + 1
    lengths = schedule.lengths(available)
    if not lengths:
        raise InsufficientHistoryError(
            f"t2={t2} has {available} observations of history, shortest window needs {schedule.min_len}"
        )
    return [(t2, n) for n in lengths]


def _aggregate(series: PriceSeries, t2: int, results, filt: FilterConfig) -> ConfidencePoint:
    n = pos = neg = 0
    for _, _, fit, _ in results:
        if fit is None:
            continue
        n += 1
        q = qualify_fit(fit, filt)
        if q is Qualification.POSITIVE:
            pos += 1
        elif q is Qualification.NEGATIVE:
            neg += 1
    if n == 0:
        reasons = "; ".join(sorted({r for *_, r in results if r}))
        raise FitFailedError(f"every window failed to fit at t2={t2}: {reasons}")
    return ConfidencePoint(
        eval_date=series.date_of(t2),
        t2_index=int(t2),
        pos_ci=pos / n,
        neg_ci=neg / n,
        n_windows=n,
        n_pos_qualified=pos,
        n_neg_qualified=neg,
    )


def confidence_at(
    series: PriceSeries,
    t2_index: int,
    schedule: WindowSchedule = WindowSchedule(),
    search: SearchConfig = SearchConfig(),
    filt: FilterConfig = FilterConfig(),
    workers: int | None = 1,
) -> ConfidencePoint:
    """Indicator values at one date, using only data up to ``t2_index``.

    Windows longer than the available history are left out of the schedule.
    Windows whose calibration fails outright are excluded from the
    denominator rather than counted as rejections.
    """
    tasks = _window_tasks(series, t2_index, schedule)
    results = _run_tasks(series.head(t2_index), search, tasks, _resolve_workers(workers))
    return _aggregate(series, t2_index, results, filt)


def scan(
    series: PriceSeries,
    t2_start: int | None = None,
    t2_end: int | None = None,
    t2_step: int = 5,
    schedule: WindowSchedule = WindowSchedule(),
    search: SearchConfig = SearchConfig(),
    filt: FilterConfig = FilterConfig(),
    workers: int | None = 1,
) -> ConfidenceSeries:
    """Indicator series over ``t2_start, t2_start + t2_step, ..., <= t2_end``.

    Defaults run from the first date with ``schedule.min_len`` observations
    to the last observation. Dates that cannot be evaluated are recorded in
    ``gaps``. Results do not depend on ``workers``.
    """
    if t2_start is None:
        t2_start = series.start + schedule.min_len - 1
    if t2_end is None:
        t2_end = series.end
    if t2_step < 1:
        raise ValueError("t2_step must be >= 1")
    if t2_start > t2_end:
        raise ValueError(f"t2_start {t2_start} is after t2_end {t2_end}")
    series.position(t2_start)
    series.position(t2_end)

    out = ConfidenceSeries()
    tasks: list[tuple[int, int]] = []
    dates = []
    for t2 in range(t2_start, t2_end + 1, t2_step):
        try:
            tasks.extend(_window_tasks(series, t2, schedule))
            dates.append(t2)
        except InsufficientHistoryError as exc:
            out.gaps.append((t2, str(exc)))

    workers = _resolve_workers(workers)
    log.info("scan: %d dates, %d window fits, %d worker(s)", len(dates), len(tasks), workers)
    by_date = defaultdict(list)
    for res in _run_tasks(series, search, tasks, workers):
        by_date[res[0]].append(res)

    for t2 in dates:
        try:
            out.points.append(_aggregate(series, t2, by_date[t2], filt))
        except FitFailedError as exc:
            out.gaps.append((t2, str(exc)))
    out.gaps.sort()
    return out


# -- rally statistics --------------------------------------------------------


@dataclass(frozen=True)
class RallyRecord:
    bottom_date: str
    bottom_price: float
    rally_date: str
    rally_price: float
    rally_size_pct: float
    peak_ci: float
    bottom_index: int
    rally_index: int
    cluster_start: str
    cluster_end: str


def ci_clusters(points: Sequence[ConfidencePoint], threshold: float, max_gap: int) -> list[list[ConfidencePoint]]:
    """Runs of dates with ``neg_ci >= threshold``, joined across gaps of at most ``max_gap`` days."""
    hits = sorted((p for p in points if p.neg_ci >= threshold), key=lambda p: p.t2_index)
    clusters: list[list[ConfidencePoint]] = []
    for p in hits:
        if clusters and p.t2_index - clusters[-1][-1].t2_index <= max_gap:
            clusters[-1].append(p)
        else:
            clusters.append([p])
    return clusters


def _find_bottom(prices: np.ndarray, start: int, horizon: int, rebound: float) -> int:
    # Running minimum until price rebounds by `rebound` above it.
    stop = min(len(prices) - 1, start + horizon)
    low = start
    for i in range(start, stop + 1):
        if prices[i] < prices[low]:
            low = i
        elif prices[i] >= prices[low] * (1 + rebound):
            break
    return low


def _find_rally_top(prices: np.ndarray, start: int, horizon: int, retrace: float) -> int:
    # Running maximum until price retraces by `retrace` below it.
    stop = min(len(prices) - 1, start + horizon)
    top = start
    for i in range(start, stop + 1):
        if prices[i] > prices[top]:
            top = i
        elif prices[i] <= prices[top] * (1 - retrace):
            break
    return top


def rally_report(
    series: PriceSeries,
    ci: ConfidenceSeries | Iterable[ConfidencePoint],
    threshold: float = 0.3,
    lookahead_days: int = 250,
    retrace: float = 0.2,
    cluster_gap: int = 10,
    min_rally_pct: float = 0.0,
) -> list[RallyRecord]:
    """Bottom-to-peak rallies that follow clusters of high negative-bubble indicator.

    For each cluster the bottom is the running price minimum from the first
    cluster date until a rebound of ``retrace`` (or ``lookahead_days``). The
    rally top is the running maximum from the bottom until a pullback of
    ``retrace`` from it (or ``lookahead_days``). Clusters leading to the same
    bottom are merged.
    """
    if not 0 <= threshold <= 1:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    if lookahead_days < 1:
        raise ValueError("lookahead_days must be >= 1")
    if not 0 < retrace < 1:
        raise ValueError("retrace must lie in (0, 1)")
    points = list(ci)
    prices = series.prices
    records: list[RallyRecord] = []
    for cluster in ci_clusters(points, threshold, cluster_gap):
        first = series.position(cluster[0].t2_index)
        peak_ci = max(p.neg_ci for p in cluster)
        b = _find_bottom(prices, first, lookahead_days, retrace)
        if records and records[-1].bottom_index == series.start + b:
            prev = records.pop()
            peak_ci = max(peak_ci, prev.peak_ci)
            cluster_start = prev.cluster_start
        else:
            cluster_start = cluster[0].eval_date
        r = _find_rally_top(prices, b, lookahead_days, retrace)
        size = (prices[r] / prices[b] - 1.0) * 100.0
        records.append(
            RallyRecord(
                bottom_date=str(series.dates[b]),
                bottom_price=float(prices[b]),
                rally_date=str(series.dates[r]),
                rally_price=float(prices[r]),
                rally_size_pct=float(size),
                peak_ci=float(peak_ci),
                bottom_index=series.start + b,
                rally_index=series.start + r,
                cluster_start=cluster_start,
                cluster_end=cluster[-1].eval_date,
            )
        )
    return [r for r in records if r.rally_size_pct >= min_rally_pct and not math.isnan(r.rally_size_pct)]
