"""Command-line entry point: ``timeontask {estimate,threshold,simulate,report}``."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path
from typing import IO, Iterator, Sequence

from .errors import ConfigurationError, EstimationError
from .estimate import on_task_mean
from .ingest import FilterConfig, extract_intervals, read_track_log
from .mixture import EmConfig, MixtureFit
from .report import (
    ESTIMATE_COLUMNS,
    POOLED,
    PipelineConfig,
    build_report,
    estimate_rows,
    read_cohorts,
    read_completion,
    read_grades,
    write_figure_data,
    write_table,
)
from .synth import GeneratorSpec, generate, write_track_log, write_truth
from .threshold import Case, ThresholdSolution, aggregate_thresholds, effective_threshold

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3

log = logging.getLogger("timeontask")


def _k_range(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(t) for t in text.replace(" ", "").split(",") if t)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad K list {text!r}") from exc
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("K values must be positive integers")
    return ks


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="global seed for EM restarts and simulation")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-user fits")
    p.add_argument("--k-range", type=_k_range, default=(3, 4, 5), help="candidate component counts, e.g. 3,4,5")
    p.add_argument("--grades", type=Path, help="table with user_id,grade")
    p.add_argument("--completion", type=Path, help="table with user_id,completed")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", type=Path, help="output path (default: stdout)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _ingest_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", type=Path, required=True, help="track log (user_id, timestamp[, resource_type])")
    p.add_argument("--delimiter", default=",", help="field delimiter; use '\\t' for tabs")
    p.add_argument("--min-clicks", type=int, default=20)
    p.add_argument("--min-interval", type=float, default=0.1, help="seconds")
    p.add_argument("--max-interval", type=float, default=7200.0, help="seconds")
    p.add_argument("--drops-out", type=Path, help="write the user drop ledger (user_id, reason)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timeontask", description="Time-on-task from click timestamps")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    est = sub.add_parser("estimate", parents=[common], help="per-user time-on-task table")
    _ingest_args(est)
    est.add_argument("--fits-out", type=Path, help="cache fitted mixtures as JSON")

    thr = sub.add_parser("threshold", parents=[common], help="effective on-task thresholds")
    _ingest_args(thr)
    thr.add_argument("--fits", type=Path, help="reuse fits cached by 'estimate --fits-out'")
    thr.add_argument("--cohort-file", type=Path, help="two-column user_id,label table")
    thr.add_argument("--per-resource", action="store_true", help="also solve per resource category")

    sim = sub.add_parser("simulate", parents=[common], help="synthetic track log from a mixture spec")
    sim.add_argument("--spec", type=Path, required=True, help="JSON generator spec")
    sim.add_argument("--truth-out", type=Path, help="per-user ground truth table")

    rep = sub.add_parser("report", parents=[common], help="full course report as JSON plus summary")
    _ingest_args(rep)
    rep.add_argument("--cohort-file", type=Path)
    rep.add_argument("--per-resource", action="store_true")
    rep.add_argument("--summary-out", type=Path, help="summary text path (default: stderr)")
    rep.add_argument("--figure-data", type=Path, help="directory for plot-ready CSV tables")
    return parser


@contextlib.contextmanager
def _output(path: Path | None) -> Iterator[IO[str]]:
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _delimiter(text: str) -> str:
    text = {"\\t": "\t", "tab": "\t"}.get(text, text)
    if len(text) != 1:
        raise ConfigurationError(f"delimiter must be one character, got {text!r}")
    return text


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    try:
        filters = FilterConfig(args.min_clicks, args.min_interval, args.max_interval)
        em = EmConfig(seed=args.seed, k_range=args.k_range)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    if args.jobs < 1:
        raise ConfigurationError("--jobs must be >= 1")
    return PipelineConfig(
        filters=filters,
        em=em,
        per_resource=getattr(args, "per_resource", False),
        jobs=args.jobs,
        delimiter=_delimiter(args.delimiter),
    )


def _load_series(args: argparse.Namespace, cfg: PipelineConfig):
    parsed = read_track_log(args.input, cfg.delimiter)
    if not parsed.events:
        log.warning("no events read from %s", args.input)
    series, drops = extract_intervals(parsed.events, cfg.filters)
    return parsed, series, drops


def _write_drops(path: Path | None, drops: dict[str, str]) -> None:
    if path is None:
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_table([{"user_id": u, "reason": r} for u, r in sorted(drops.items())], ["user_id", "reason"], fh)


def _side_tables(args: argparse.Namespace) -> dict:
    extra: dict = {}
    if args.grades:
        extra["grades"] = read_grades(args.grades)
    if args.completion:
        extra["completion"] = read_completion(args.completion)
    if getattr(args, "cohort_file", None):
        extra["cohorts"] = read_cohorts(args.cohort_file)
    return extra


def cmd_estimate(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    parsed, series, drops = _load_series(args, cfg)
    report = build_report(series, drops, cfg, n_malformed_rows=parsed.n_malformed)
    with _output(args.out) as out:
        write_table(estimate_rows(report), ESTIMATE_COLUMNS, out, args.format)
    if args.fits_out:
        fits = {u.user_id: u.pooled.fit.to_json() for u in report.users if u.pooled.fit is not None}
        args.fits_out.write_text(json.dumps(fits, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_drops(args.drops_out, report.drops)
    return EXIT_OK


def _solutions_from_cache(series, fits_path: Path) -> tuple[list[ThresholdSolution], dict[str, str]]:
    cache = json.loads(fits_path.read_text(encoding="utf-8"))
    sols: list[ThresholdSolution] = []
    drops: dict[str, str] = {}
    for user in sorted(series):
        if user not in cache:
            drops[user] = "no_cached_fit"
            continue
        fit = MixtureFit.from_json(cache[user])
        s = series[user]
        if fit.n != s.n:
            raise ConfigurationError(f"cached fit for {user!r} has {fit.n} intervals, log has {s.n}")
        if not fit.converged:
            drops[user] = "no_convergence"
            continue
        try:
            T = s.n * on_task_mean(fit)
        except EstimationError:
            sols.append(ThresholdSolution(user, None, Case.NONE))
            continue
        sols.append(effective_threshold(s.deltas, min(T, s.net_time), user))
    return sols, drops


def cmd_threshold(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    extra = _side_tables(args)
    cohorts = extra.get("cohorts")
    parsed, series, drops = _load_series(args, cfg)
    rows: list[dict] = []
    if args.fits:
        if args.per_resource:
            raise ConfigurationError("--per-resource needs fresh fits; drop --fits")
        sols, fit_drops = _solutions_from_cache(series, args.fits)
        drops.update(fit_drops)
        by_category = {POOLED: sols}
    else:
        report = build_report(series, drops, cfg, n_malformed_rows=parsed.n_malformed)
        drops = report.drops
        by_category = {POOLED: [u.pooled.threshold for u in report.fitted if u.pooled.threshold]}
        for u in report.users:
            for c in u.categories:
                if c.status == "ok" and c.threshold is not None:
                    by_category.setdefault(c.category, []).append(c.threshold)
    for category, sols in by_category.items():
        for agg in aggregate_thresholds(sols, cohorts).values():
            row = {
                "cohort": agg.cohort,
                "mean_tau_seconds": agg.mean_tau,
                "n_users": agg.n_users,
                "n_excluded": agg.n_excluded,
            }
            if args.per_resource:
                row["category"] = category
            rows.append(row)
    columns = ["cohort", "mean_tau_seconds", "n_users", "n_excluded"]
    if args.per_resource:
        columns.insert(1, "category")
    with _output(args.out) as out:
        write_table(rows, columns, out, args.format)
    _write_drops(args.drops_out, drops)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = GeneratorSpec.load(args.spec)
    events, truth = generate(spec)
    with _output(args.out) as out:
        write_track_log(events, out)
    if args.truth_out:
        with open(args.truth_out, "w", encoding="utf-8", newline="") as fh:
            write_truth(truth, fh)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    extra = _side_tables(args)
    parsed, series, drops = _load_series(args, cfg)
    report = build_report(series, drops, cfg, n_malformed_rows=parsed.n_malformed, **extra)
    with _output(args.out) as out:
        json.dump(report.to_json(), out, indent=2, sort_keys=True, allow_nan=True)
        out.write("\n")
    summary = report.summary_text()
    if args.summary_out:
        args.summary_out.write_text(summary, encoding="utf-8")
    else:
        sys.stderr.write(summary)
    if args.figure_data:
        write_figure_data(report, args.figure_data)
    _write_drops(args.drops_out, report.drops)
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "threshold": cmd_threshold,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
