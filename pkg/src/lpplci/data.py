"""Price data in and out: Yahoo-style OHLC CSV files and synthetic series.

The on-disk format is the seven-column daily export::

    Date,Open,High,Low,Close,Adj Close,Volume

with ISO dates and ``null`` (or an empty cell) for missing numbers.
Synthetic series are written in the same format with Open/High/Low/Adj Close
mirrored from Close, so fixtures and real data go through one code path.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .errors import (
    MalformedHeaderError,
    NonIncreasingDatesError,
    TooFewRowsError,
    UnparseableDateError,
)
from .model import LpplParams, PriceSeries, lppl_log_price

CANONICAL_HEADER = ("Date", "Open", "High", "Low", "Close", "Adj Close", "Volume")
PRICE_COLUMNS = {
    "open": "Open",
    "high": "High",
    "low": "Low",
    "close": "Close",
    "adj_close": "Adj Close",
}
MISSING = "null"

DEFAULT_START_DATE = dt.date(2000, 1, 3)


@dataclass(frozen=True)
class OhlcRow:
    date: dt.date
    open: float | None = None
    high: float | None = None
    low: float | None = None
    close: float | None = None
    adj_close: float | None = None
    volume: int | None = None

    def __post_init__(self):
        if self.low is not None and self.high is not None and self.low > self.high:
            raise ValueError(f"{self.date}: low {self.low} exceeds high {self.high}")

    def price(self, column: str) -> float | None:
        if column not in PRICE_COLUMNS:
            raise ValueError(f"unknown price column {column!r}; choose from {sorted(PRICE_COLUMNS)}")
        return getattr(self, column)


def _parse_date(text: str, line: int) -> dt.date:
    # fromisoformat also accepts forms like 20200403 on newer Pythons; pin the layout.
    if len(text) != 10 or text[4] != "-" or text[7] != "-":
        raise UnparseableDateError(f"line {line}: {text!r} is not YYYY-MM-DD")
    try:
        return dt.date.fromisoformat(text)
    except ValueError as exc:
        raise UnparseableDateError(f"line {line}: {text!r} is not a valid date") from exc


def _parse_float(text: str, line: int, name: str) -> float | None:
    text = text.strip()
    if text == "" or text.lower() == MISSING:
        return None
    try:
        value = float(text)
    except ValueError as exc:
        raise ValueError(f"line {line}: {name} value {text!r} is not a number") from exc
    return value if math.isfinite(value) else None


def _parse_volume(text: str, line: int) -> int | None:
    value = _parse_float(text, line, "Volume")
    if value is None:
        return None
    if value < 0 or value != int(value):
        raise ValueError(f"line {line}: Volume {text!r} is not a non-negative integer")
    return int(value)


def _read_text(raw: bytes | str | IO) -> str:
    if isinstance(raw, bytes):
        return raw.decode("utf-8-sig")
    if isinstance(raw, str):
        return raw
    data = raw.read()
    return data.decode("utf-8-sig") if isinstance(data, bytes) else data


def parse_ohlc_csv(raw: bytes | str | IO) -> list[OhlcRow]:
    """Parse a daily OHLC CSV export into rows, oldest first.

    The header must contain ``Date`` and at least one price column; absent
    columns are treated as missing. Dates must be strictly increasing.
    """
    reader = csv.reader(io.StringIO(_read_text(raw)))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MalformedHeaderError("input is empty (no header row)") from None
    if len(set(header)) != len(header):
        raise MalformedHeaderError(f"duplicate column names in header {header}")
    if "Date" not in header:
        raise MalformedHeaderError(f"header {header} has no Date column")
    if not any(name in header for name in PRICE_COLUMNS.values()):
        raise MalformedHeaderError(f"header {header} has no price column")
    col = {name: header.index(name) for name in header}

    rows: list[OhlcRow] = []
    for line, record in enumerate(reader, start=2):
        if not record or all(not cell.strip() for cell in record):
            continue
        if len(record) != len(header):
            raise ValueError(f"line {line}: expected {len(header)} fields, got {len(record)}")
        date = _parse_date(record[col["Date"]].strip(), line)
        if rows and date <= rows[-1].date:
            raise NonIncreasingDatesError(f"line {line}: {date} does not follow {rows[-1].date}")
        values = {
            attr: _parse_float(record[col[name]], line, name) if name in col else None
            for attr, name in PRICE_COLUMNS.items()
        }
        volume = _parse_volume(record[col["Volume"]], line) if "Volume" in col else None
        try:
            rows.append(OhlcRow(date=date, volume=volume, **values))
        except ValueError as exc:
            raise ValueError(f"line {line}: {exc}") from exc
    return rows


def _format_number(value) -> str:
    if value is None:
        return MISSING
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def serialize_ohlc_csv(rows: Iterable[OhlcRow]) -> str:
    """Canonical CSV text; ``parse_ohlc_csv`` reads it back to identical rows."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CANONICAL_HEADER)
    for r in rows:
        writer.writerow(
            [
                r.date.isoformat(),
                *(_format_number(getattr(r, attr)) for attr in PRICE_COLUMNS),
                _format_number(r.volume),
            ]
        )
    return buf.getvalue()


def read_ohlc_csv(path: str | os.PathLike) -> list[OhlcRow]:
    with open(path, "rb") as fh:
        return parse_ohlc_csv(fh.read())


def to_price_series(rows: list[OhlcRow], column: str = "adj_close") -> PriceSeries:
    """Keep rows whose ``column`` is present and positive and re-index them 0..N-1.

    Missing days are dropped, never interpolated.
    """
    kept = [(r.date, r.price(column)) for r in rows]
    kept = [(d, p) for d, p in kept if p is not None and p > 0]
    if len(kept) < 2:
        raise TooFewRowsError(f"need at least 2 rows with a positive {column!r} value, found {len(kept)}")
    dates = np.array([d.isoformat() for d, _ in kept], dtype="datetime64[D]")
    prices = np.array([p for _, p in kept], dtype=np.float64)
    return PriceSeries(np.arange(len(kept)), dates, prices)


def read_price_series(path: str | os.PathLike, column: str = "adj_close") -> PriceSeries:
    return to_price_series(read_ohlc_csv(path), column)


def series_to_rows(series: PriceSeries) -> list[OhlcRow]:
    return [
        OhlcRow(date=d.item(), open=p, high=p, low=p, close=p, adj_close=p, volume=None)
        for d, p in zip(series.dates, series.prices.tolist())
    ]


def write_price_series(series: PriceSeries, path: str | os.PathLike) -> None:
    Path(path).write_text(serialize_ohlc_csv(series_to_rows(series)), encoding="utf-8")


def trading_days(n: int, start: dt.date = DEFAULT_START_DATE) -> np.ndarray:
    """``n`` consecutive weekdays starting at (or rolled forward to) ``start``."""
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(n), roll="forward")


@dataclass(frozen=True)
class SyntheticSpec:
    params: LpplParams
    n_days: int
    noise_sigma: float = 0.0
    seed: int = 0
    start_date: dt.date = DEFAULT_START_DATE

    def __post_init__(self):
        if self.n_days < 10:
            raise ValueError("n_days must be >= 10")
        if not self.params.tc > self.n_days - 1:
            raise ValueError(f"tc={self.params.tc} must exceed the last day {self.n_days - 1}")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")


def generate_lppl(spec: SyntheticSpec) -> PriceSeries:
    """Model log-prices plus iid Gaussian log-price noise, exponentiated."""
    t = np.arange(spec.n_days)
    logp = lppl_log_price(spec.params, t.astype(np.float64))
    if spec.noise_sigma > 0:
        logp = logp + np.random.default_rng(spec.seed).normal(0.0, spec.noise_sigma, spec.n_days)
    return PriceSeries(t, trading_days(spec.n_days, spec.start_date), np.exp(logp))


def generate_random_walk(
    n_days: int,
    drift: float,
    sigma: float,
    seed: int,
    start_price: float = 100.0,
    start_date: dt.date = DEFAULT_START_DATE,
) -> PriceSeries:
    """Geometric random walk: log-returns iid N(drift, sigma^2)."""
    if n_days < 10:
        raise ValueError("n_days must be >= 10")
    if not sigma >= 0:
        raise ValueError("sigma must be >= 0")
    if seed < 0:
        raise ValueError("seed must be unsigned")
    steps = np.full(n_days - 1, float(drift))
    if sigma > 0:
        steps = steps + sigma * np.random.default_rng(seed).standard_normal(n_days - 1)
    # Scale after exponentiating so a zero-volatility, zero-drift walk stays exactly flat.
    prices = start_price * np.exp(np.concatenate(([0.0], np.cumsum(steps))))
    return PriceSeries(np.arange(n_days), trading_days(n_days, start_date), prices)

