"""Command-line interface: ``lppl-ci {scan,report,synth}``.

Exit status: 0 success, 2 usage or input error, 3 insufficient data.

``scan`` options may also come from a config file named by ``--config`` or
the ``LPPL_SCAN_CONFIG`` environment variable. The file holds one option per
line, written like the flag (``--min-window 250``, ``min-window = 250`` and
``min-window 250`` are all accepted; ``#`` starts a comment). Command-line
flags override the file, which overrides the built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .calibration import SearchConfig
from .data import SyntheticSpec, generate_lppl, read_ohlc_csv, serialize_ohlc_csv, series_to_rows, to_price_series
from .errors import DataError, InsufficientHistoryError, TooFewRowsError
from .indicator import ConfidencePoint, ConfidenceSeries, FilterConfig, WindowSchedule, rally_report, scan
from .model import LpplParams, PriceSeries

log = logging.getLogger("lpplci")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INSUFFICIENT = 3

INDICATOR_COLUMNS = ["date", "price", "pos_ci", "neg_ci", "n_windows", "n_pos_qualified", "n_neg_qualified"]
RALLY_COLUMNS = ["bottom_day", "bottom_price", "rally_date", "rally_price", "rally_size_pct", "peak_ci"]
CONFIG_ENV = "LPPL_SCAN_CONFIG"


class CliError(Exception):
    def __init__(self, message: str, status: int = EXIT_USAGE):
        super().__init__(message)
        self.status = status


def _unit_interval(text: str) -> float:
    value = float(text)
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _unsigned(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_atomic(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _read_prices(path: str, column: str) -> PriceSeries:
    try:
        rows = read_ohlc_csv(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from exc
    try:
        return to_price_series(rows, column)
    except TooFewRowsError as exc:
        raise CliError(f"{path}: {exc}", EXIT_INSUFFICIENT) from exc


# -- config file ---------------------------------------------------------------


def config_file_tokens(path: str) -> list[str]:
    """Turn a flag-style config file into argv tokens."""
    tokens: list[str] = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}") from exc
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
        else:
            key, _, value = line.partition(" ")
            value = value.strip()
        key = "--" + key.lstrip("-")
        tokens.append(key)
        if value:
            tokens.append(value)
    return tokens


def _split_config(argv: list[str]) -> tuple[str | None, list[str]]:
    """Pull ``--config PATH`` out of ``argv``; fall back to the environment."""
    out, path, i = [], None, 0
    while i < len(argv):
        arg = argv[i]
        if arg == "--config":
            if i + 1 >= len(argv):
                raise CliError("--config needs a path")
            path = argv[i + 1]
            i += 2
            continue
        if arg.startswith("--config="):
            path = arg.split("=", 1)[1]
        else:
            out.append(arg)
        i += 1
    return path or os.environ.get(CONFIG_ENV) or None, out


# -- scan ----------------------------------------------------------------------


def _ordinal(series: PriceSeries, text: str | None, default: int) -> int:
    """An ordinal given either as an integer or as an ISO date (last trading day on or before it)."""
    if text is None:
        return default
    try:
        return int(text)
    except ValueError:
        pass
    try:
        day = np.datetime64(dt.date.fromisoformat(text), "D")
    except ValueError as exc:
        raise CliError(f"{text!r} is neither a trading-day ordinal nor an ISO date") from exc
    pos = int(np.searchsorted(series.dates, day, side="right")) - 1
    if pos < 0:
        raise CliError(f"{text} precedes the first observation {series.dates[0]}")
    return series.start + pos


def _scan_settings(args) -> tuple[WindowSchedule, SearchConfig, FilterConfig]:
    schedule = WindowSchedule(args.min_window, args.max_window, args.window_step)
    search = SearchConfig(
        tc_upper_frac=args.tc_search_max,
        beta_range=(args.beta_min, args.beta_max),
        omega_range=(args.omega_min, args.omega_max),
        n_starts=args.n_starts,
        seed=args.seed,
    )
    filt = FilterConfig(
        beta_bounds=(args.beta_min, args.beta_max),
        omega_bounds=(args.omega_min, args.omega_max),
        tc_window_frac=(0.0, args.tc_frac_max),
        min_oscillations=args.min_oscillations,
        damping_min=args.damping_min,
        require_beta_in_unit=args.require_beta_in_unit,
    )
    return schedule, search, filt


def _resolved_config(args, schedule, search, filt, t2_range) -> dict:
    # `workers` is left out on purpose: it never changes the result.
    return {
        "input": args.input,
        "column": args.column,
        "t2_start": t2_range[0],
        "t2_end": t2_range[1],
        "t2_step": args.t2_step,
        "threshold": args.threshold,
        "schedule": schedule.to_dict(),
        "search": search.to_dict(),
        "filter": filt.to_dict(),
    }


def indicator_csv(series: PriceSeries, points: list[ConfidencePoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(INDICATOR_COLUMNS)
    for p in points:
        price = series.prices[series.position(p.t2_index)]
        writer.writerow(
            [p.eval_date, _fmt(price), _fmt(p.pos_ci), _fmt(p.neg_ci), p.n_windows, p.n_pos_qualified, p.n_neg_qualified]
        )
    return buf.getvalue()


def indicator_json(series: PriceSeries, result: ConfidenceSeries, config: dict) -> str:
    points = [
        {
            "date": p.eval_date,
            "t2_index": p.t2_index,
            "price": float(series.prices[series.position(p.t2_index)]),
            "pos_ci": p.pos_ci,
            "neg_ci": p.neg_ci,
            "n_windows": p.n_windows,
            "n_pos_qualified": p.n_pos_qualified,
            "n_neg_qualified": p.n_neg_qualified,
        }
        for p in result.points
    ]
    gaps = [{"t2_index": t2, "date": series.date_of(t2), "reason": why} for t2, why in result.gaps]
    return json.dumps({"config": config, "points": points, "gaps": gaps}, indent=2) + "\n"


def cmd_scan(args) -> int:
    schedule, search, filt = _scan_settings(args)
    if args.print_config and args.input is None:
        config = _resolved_config(args, schedule, search, filt, (args.t2_start, args.t2_end))
        print(json.dumps(config, indent=2))
        return EXIT_OK
    if args.input is None:
        raise CliError("scan needs --input")
    series = _read_prices(args.input, args.column)
    t2_start = _ordinal(series, args.t2_start, series.start + schedule.min_len - 1)
    t2_end = _ordinal(series, args.t2_end, series.end)
    config = _resolved_config(args, schedule, search, filt, (t2_start, t2_end))
    if args.print_config:
        print(json.dumps(config, indent=2))
        return EXIT_OK
    log.info("resolved configuration: %s", json.dumps(config, sort_keys=True))

    if not series.start <= t2_end <= series.end:
        raise CliError(f"t2 end {t2_end} is outside the series [{series.start}, {series.end}]")
    if t2_end - series.start + 1 < schedule.min_len:
        raise CliError(
            f"{len(series)} observations up to t2={t2_end}; the shortest window needs {schedule.min_len}",
            EXIT_INSUFFICIENT,
        )
    t2_start = max(t2_start, series.start + schedule.min_len - 1)
    if t2_start > t2_end:
        raise CliError(f"t2 start {t2_start} is after t2 end {t2_end}")

    result = scan(series, t2_start, t2_end, args.t2_step, schedule, search, filt, workers=args.workers)
    for t2, why in result.gaps:
        log.warning("no indicator at %s (t2=%d): %s", series.date_of(t2), t2, why)
    if not result.points:
        raise CliError("no evaluation date could be computed", EXIT_INSUFFICIENT)

    fmt = args.format or ("json" if str(args.output).endswith(".json") else "csv")
    text = indicator_json(series, result, config) if fmt == "json" else indicator_csv(series, result.points)
    _write_atomic(args.output, text)
    hot = sum(p.neg_ci >= args.threshold for p in result.points)
    log.info(
        "wrote %d points to %s; max neg_ci %.3f, max pos_ci %.3f, %d date(s) with neg_ci >= %.2f",
        len(result.points),
        args.output,
        max(p.neg_ci for p in result.points),
        max(p.pos_ci for p in result.points),
        hot,
        args.threshold,
    )
    return EXIT_OK


# -- report ----------------------------------------------------------------------


def read_indicator(path: str, series: PriceSeries) -> list[ConfidencePoint]:
    """Load a ``scan`` output (CSV or JSON) and tie its dates to ``series``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    if text.lstrip().startswith("{"):
        try:
            records = json.loads(text)["points"]
        except (ValueError, KeyError, TypeError) as exc:
            raise CliError(f"{path}: not an indicator JSON file ({exc})") from exc
    else:
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != INDICATOR_COLUMNS:
            raise CliError(f"{path}: header {reader.fieldnames} does not match {INDICATOR_COLUMNS}")
        records = list(reader)

    index = {str(d): series.start + i for i, d in enumerate(series.dates)}
    points = []
    for rec in records:
        try:
            date = str(rec["date"])
            price = float(rec["price"])
            n, pos, neg = int(rec["n_windows"]), int(rec["n_pos_qualified"]), int(rec["n_neg_qualified"])
            pos_ci, neg_ci = float(rec["pos_ci"]), float(rec["neg_ci"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(f"{path}: malformed indicator record {rec!r}") from exc
        if date not in index:
            raise CliError(f"{path}: date {date} does not occur in the price file")
        t2 = index[date]
        have = series.prices[series.position(t2)]
        if abs(have - price) > 1e-9 * max(abs(have), 1.0):
            raise CliError(f"{path}: price {price} at {date} does not match price file value {have}")
        points.append(ConfidencePoint(date, t2, pos_ci, neg_ci, n, pos, neg))
    return points


def rally_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RALLY_COLUMNS)
    for r in records:
        writer.writerow(
            [r.bottom_date, _fmt(r.bottom_price), r.rally_date, _fmt(r.rally_price), _fmt(r.rally_size_pct), _fmt(r.peak_ci)]
        )
    return buf.getvalue()


def cmd_report(args) -> int:
    series = _read_prices(args.prices, args.column)
    points = read_indicator(args.indicator, series)
    records = rally_report(
        series,
        points,
        threshold=args.threshold,
        lookahead_days=args.lookahead,
        retrace=args.retrace,
        cluster_gap=args.cluster_gap,
        min_rally_pct=args.min_rally_pct,
    )
    _write_atomic(args.output, rally_csv(records))
    log.info("%d rally record(s) at threshold %.2f", len(records), args.threshold)
    return EXIT_OK


# -- synth -----------------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        params = LpplParams(args.tc, args.beta, args.omega, args.A, args.B, args.C1, args.C2)
        start = dt.date.fromisoformat(args.start_date)
        spec = SyntheticSpec(params, args.n_days, args.noise, args.seed, start)
        series = generate_lppl(spec)
    except ValueError as exc:
        raise CliError(f"invalid synthetic spec: {exc}") from exc
    _write_atomic(args.output, serialize_ohlc_csv(series_to_rows(series)))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lppl-ci", description=__doc__.split("\n\n")[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="rolling-window LPPL confidence indicators")
    p.add_argument("--input", help="price CSV (Date,Open,High,Low,Close,Adj Close,Volume)")
    p.add_argument("--column", choices=["close", "adj_close"], default="adj_close")
    p.add_argument("--min-window", type=_positive_int, default=125)
    p.add_argument("--max-window", type=_positive_int, default=750)
    p.add_argument("--window-step", type=_positive_int, default=25)
    p.add_argument("--t2-start", help="first evaluation date (ordinal or YYYY-MM-DD)")
    p.add_argument("--t2-end", help="last evaluation date (ordinal or YYYY-MM-DD)")
    p.add_argument("--t2-step", type=_positive_int, default=5)
    p.add_argument("--threshold", type=_unit_interval, default=0.3)
    p.add_argument("--seed", type=_unsigned, default=0)
    p.add_argument("--n-starts", type=_positive_int, default=SearchConfig.n_starts)
    p.add_argument("--workers", type=int, default=1, help="parallel fit processes (0 = all cores)")
    p.add_argument("--output", default="-")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--beta-min", type=float, default=0.01)
    p.add_argument("--beta-max", type=float, default=1.2)
    p.add_argument("--omega-min", type=float, default=2.0)
    p.add_argument("--omega-max", type=float, default=25.0)
    p.add_argument("--min-oscillations", type=float, default=2.5)
    p.add_argument("--damping-min", type=float, default=0.8)
    p.add_argument("--tc-frac-max", type=float, default=0.2, help="qualifying tc lead, fraction of window")
    p.add_argument("--tc-search-max", type=float, default=0.5, help="tc search ceiling, fraction of window")
    p.add_argument("--require-beta-in-unit", action="store_true")
    p.add_argument("--print-config", action="store_true", help="print the effective settings and exit")
    p.add_argument("--config", help=f"flag-style config file (default: ${CONFIG_ENV})")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("report", help="rally statistics after negative-bubble signals")
    p.add_argument("--indicator", required=True, help="output of `scan`")
    p.add_argument("--prices", required=True, help="the price CSV the indicator was computed on")
    p.add_argument("--column", choices=["close", "adj_close"], default="adj_close")
    p.add_argument("--threshold", type=_unit_interval, default=0.3)
    p.add_argument("--lookahead", type=_positive_int, default=250, help="trading days")
    p.add_argument("--retrace", type=float, default=0.2, help="pullback fraction that ends a rally")
    p.add_argument("--cluster-gap", type=_unsigned, default=10, help="trading days")
    p.add_argument("--min-rally-pct", type=float, default=0.0)
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write a synthetic LPPL price fixture")
    p.add_argument("--tc", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--omega", type=float, required=True)
    p.add_argument("--A", type=float, required=True)
    p.add_argument("--B", type=float, required=True)
    p.add_argument("--C1", type=float, default=0.0)
    p.add_argument("--C2", type=float, default=0.0)
    p.add_argument("--n-days", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0, help="std-dev of log-price noise")
    p.add_argument("--seed", type=_unsigned, default=0)
    p.add_argument("--start-date", default="2000-01-03")
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_synth)
    return parser


def _expand_config(argv: list[str]) -> list[str]:
    if "scan" not in argv:
        return argv
    at = argv.index("scan")
    path, rest = _split_config(argv[at + 1 :])
    tokens = config_file_tokens(path) if path else []
    return argv[:at] + ["scan"] + tokens + rest


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_expand_config(argv))
    except CliError as exc:
        print(f"lppl-ci: error: {exc}", file=sys.stderr)
        return exc.status
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"lppl-ci: error: {exc}", file=sys.stderr)
        return exc.status
    except InsufficientHistoryError as exc:
        print(f"lppl-ci: error: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except (DataError, ValueError) as exc:
        print(f"lppl-ci: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
