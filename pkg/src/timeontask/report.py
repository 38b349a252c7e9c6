"""Course-level pipeline: ingest, per-user fits, estimates, thresholds, aggregates."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, InsufficientData
from .estimate import TimeOnTaskEstimate, estimate_user
from .ingest import FilterConfig, IntervalSeries, extract_intervals, read_track_log, stratify
from .mixture import EmConfig, MixtureFit, derive_seed, log_transform, select_model
from .threshold import (
    Case,
    ThresholdAggregate,
    ThresholdSolution,
    aggregate_thresholds,
    effective_threshold,
)

logger = logging.getLogger(__name__)

POOLED = "all"
DROP_NO_CONVERGENCE = "no_convergence"
DROP_INSUFFICIENT = "insufficient_data"


@dataclass(frozen=True)
class PipelineConfig:
    filters: FilterConfig = field(default_factory=FilterConfig)
    em: EmConfig = field(default_factory=EmConfig)
    per_resource: bool = False
    jobs: int = 1
    delimiter: str = ","


@dataclass
class FitOutcome:
    """One fit (pooled or one resource category) for one user."""

    user_id: str
    category: str
    n_intervals: int
    fit: MixtureFit | None
    estimate: TimeOnTaskEstimate | None
    threshold: ThresholdSolution | None
    status: str = "ok"
    net_time: float = 0.0


@dataclass
class UserResult:
    user_id: str
    pooled: FitOutcome
    categories: list[FitOutcome] = field(default_factory=list)

    @property
    def dropped(self) -> str | None:
        return None if self.pooled.status == "ok" else self.pooled.status


@dataclass
class CourseReport:
    users: list[UserResult]
    drops: dict[str, str]
    n_users_total: int
    aggregate_gof: float | None
    mean_on_task_ratio: float | None
    thresholds: dict[str, ThresholdAggregate]
    k_breakdown: dict[int, int]
    per_resource_summaries: dict[str, dict[str, Any]] | None = None
    grade_correlation: float | None = None
    completer_ratio: float | None = None
    n_malformed_rows: int = 0

    @property
    def fitted(self) -> list[UserResult]:
        return [u for u in self.users if u.dropped is None]

    @property
    def n_users_fit(self) -> int:
        return len(self.fitted)

    @property
    def n_users_dropped(self) -> int:
        return len(self.drops)

    @property
    def drop_counts(self) -> dict[str, int]:
        return dict(sorted(Counter(self.drops.values()).items()))

    def estimates(self) -> list[TimeOnTaskEstimate]:
        return [u.pooled.estimate for u in self.fitted if u.pooled.estimate is not None]

    def to_json(self) -> dict[str, Any]:
        return {
            "n_users_total": self.n_users_total,
            "n_users_fit": self.n_users_fit,
            "n_users_dropped": self.n_users_dropped,
            "drop_counts": self.drop_counts,
            "drops": dict(sorted(self.drops.items())),
            "n_malformed_rows": self.n_malformed_rows,
            "aggregate_gof": self.aggregate_gof,
            "mean_on_task_ratio": self.mean_on_task_ratio,
            "k_breakdown": {str(k): v for k, v in sorted(self.k_breakdown.items())},
            "thresholds": {k: _aggregate_json(v) for k, v in self.thresholds.items()},
            "per_resource_summaries": self.per_resource_summaries,
            "grade_correlation": self.grade_correlation,
            "completer_ratio": self.completer_ratio,
            "per_user": [_user_json(u) for u in self.users],
        }

    def summary_text(self) -> str:
        lines = [
            f"users: {self.n_users_total} total, {self.n_users_fit} fit, {self.n_users_dropped} dropped",
        ]
        for reason, count in self.drop_counts.items():
            lines.append(f"  dropped[{reason}]: {count}")
        lines.append(f"aggregate gof (mean - 1 sd): {_fmt(self.aggregate_gof)}")
        lines.append(f"mean on-task ratio: {_fmt(self.mean_on_task_ratio)}")
        if self.k_breakdown:
            total = sum(self.k_breakdown.values())
            parts = [f"K={k}: {100.0 * v / total:.1f}%" for k, v in sorted(self.k_breakdown.items())]
            lines.append("components chosen: " + ", ".join(parts))
        for agg in self.thresholds.values():
            lines.append(
                f"effective threshold [{agg.cohort}]: {_fmt(agg.mean_tau)} s "
                f"({agg.n_users} users, {agg.n_excluded} without solution)"
            )
        if self.per_resource_summaries:
            for cat, s in self.per_resource_summaries.items():
                lines.append(
                    f"  [{cat}] users fit {s['n_users_fit']}, gof {_fmt(s['aggregate_gof'])}, "
                    f"tau {_fmt(s['mean_tau'])} s"
                )
        if self.grade_correlation is not None:
            lines.append(f"corr(log T, grade): {_fmt(self.grade_correlation)}")
        if self.completer_ratio is not None:
            lines.append(f"completer / non-completer T ratio: {_fmt(self.completer_ratio)}")
        return "\n".join(lines) + "\n"


def _fmt(value: float | None) -> str:
    return "NA" if value is None else f"{value:.6f}"


def _aggregate_json(agg: ThresholdAggregate) -> dict[str, Any]:
    return {"mean_tau_seconds": agg.mean_tau, "n_users": agg.n_users, "n_excluded": agg.n_excluded}


def _outcome_json(o: FitOutcome) -> dict[str, Any]:
    out: dict[str, Any] = {
        "category": o.category,
        "n_intervals": o.n_intervals,
        "net_time_s": o.net_time,
        "status": o.status,
    }
    if o.fit is not None:
        out["fit"] = o.fit.to_json()
        out["gof_squared"] = o.fit.gof_squared
    if o.estimate is not None:
        e = o.estimate
        out.update(
            T_s=e.T,
            T_excluding_fast_s=e.T_excluding_fast,
            T_excluding_fast_unnormalized_s=e.T_excluding_fast_unnormalized,
            ratio=e.on_task_ratio,
            M_on_s=e.M_on,
            K=e.K_used,
            gof=e.gof,
        )
    if o.threshold is not None:
        t = o.threshold
        out["threshold"] = {
            "tau_s": t.tau,
            "case": t.case.value,
            "F_left": t.F_left,
            "F_right": t.F_right,
            "shelf_bounds": None if t.shelf_bounds is None else list(t.shelf_bounds),
        }
    return out


def _user_json(u: UserResult) -> dict[str, Any]:
    out = {"user_id": u.user_id, **_outcome_json(u.pooled)}
    if u.categories:
        out["categories"] = [_outcome_json(c) for c in u.categories]
    return out


# --- course-level statistics -------------------------------------------------


def aggregate_gof(user_gofs: Iterable[float | None]) -> float | None:
    """Mean minus one sample standard deviation; ``None`` with fewer than 2 values."""
    vals = np.array([g for g in user_gofs if g is not None and math.isfinite(g)], dtype=float)
    if vals.size < 2:
        return None
    return float(vals.mean() - vals.std(ddof=1))


def _t_by_user(estimates: Iterable[TimeOnTaskEstimate] | Mapping[str, float | None]) -> dict[str, float | None]:
    if isinstance(estimates, Mapping):
        return dict(estimates)
    return {e.user_id: e.T for e in estimates}


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    if a.size < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    rho = float(np.corrcoef(a, b)[0, 1])
    return rho if math.isfinite(rho) else None


def grade_correlation(
    estimates: Iterable[TimeOnTaskEstimate] | Mapping[str, float | None],
    grades: Mapping[str, float | None],
) -> float | None:
    """Pearson correlation of log time-on-task with grade over users having both."""
    t = _t_by_user(estimates)
    pairs = [
        (math.log(T), float(grades[u]))
        for u, T in sorted(t.items())
        if T is not None and T > 0 and grades.get(u) is not None and math.isfinite(float(grades[u]))
    ]
    if len(pairs) < 3:
        return None
    arr = np.array(pairs)
    return _pearson(arr[:, 0], arr[:, 1])


def log_mean_gap(
    estimates: Iterable[TimeOnTaskEstimate] | Mapping[str, float | None],
    completed: Mapping[str, bool],
) -> float | None:
    """Mean log T of completers minus that of non-completers."""
    t = _t_by_user(estimates)
    yes = [math.log(T) for u, T in t.items() if T and T > 0 and completed.get(u) is True]
    no = [math.log(T) for u, T in t.items() if T and T > 0 and completed.get(u) is False]
    if not yes or not no:
        return None
    return math.fsum(yes) / len(yes) - math.fsum(no) / len(no)


def completer_ratio(
    estimates: Iterable[TimeOnTaskEstimate] | Mapping[str, float | None],
    completed: Mapping[str, bool],
) -> float | None:
    gap = log_mean_gap(estimates, completed)
    return None if gap is None else math.exp(gap)


def cross_course_completer_ratio(gaps: Iterable[float | None]) -> float | None:
    """Average per-course log gaps with equal course weight, then exponentiate."""
    vals = [g for g in gaps if g is not None]
    if not vals:
        return None
    return math.exp(math.fsum(vals) / len(vals))


# --- per-user work -----------------------------------------------------------


def fit_series(series: IntervalSeries, category: str, em: EmConfig) -> FitOutcome:
    """Model selection, estimate and effective threshold for one interval series."""
    deltas = series.deltas
    seed = derive_seed(em.seed, series.user_id, category)
    try:
        fit = select_model(log_transform(deltas), deltas, em, seed=seed)
    except InsufficientData:
        return FitOutcome(series.user_id, category, series.n, None, None, None, DROP_INSUFFICIENT, series.net_time)
    if not fit.converged:
        return FitOutcome(series.user_id, category, series.n, fit, None, None, DROP_NO_CONVERGENCE, series.net_time)
    est = estimate_user(series.user_id, deltas, fit)
    if est.T is None:
        sol = ThresholdSolution(series.user_id, None, Case.NONE)
    else:
        sol = effective_threshold(deltas, min(est.T, est.net_time), series.user_id)
    return FitOutcome(series.user_id, category, series.n, fit, est, sol, net_time=est.net_time)


def process_user(series: IntervalSeries, cfg: PipelineConfig) -> UserResult:
    result = UserResult(series.user_id, fit_series(series, POOLED, cfg.em))
    if cfg.per_resource:
        for cat, sub in stratify(series).items():
            if sub.n < cfg.em.min_points:
                result.categories.append(
                    FitOutcome(series.user_id, str(cat), sub.n, None, None, None, "skipped", sub.net_time)
                )
            else:
                result.categories.append(fit_series(sub, str(cat), cfg.em))
    return result


def _process_all(series: Sequence[IntervalSeries], cfg: PipelineConfig) -> list[UserResult]:
    if cfg.jobs > 1 and len(series) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            chunk = max(1, len(series) // (4 * cfg.jobs))
            return list(pool.map(process_user, series, [cfg] * len(series), chunksize=chunk))
    return [process_user(s, cfg) for s in series]


def _category_summaries(users: Sequence[UserResult]) -> dict[str, dict[str, Any]]:
    by_cat: dict[str, list[FitOutcome]] = {}
    for u in users:
        for c in u.categories:
            by_cat.setdefault(c.category, []).append(c)
    out: dict[str, dict[str, Any]] = {}
    for cat in sorted(by_cat):
        outcomes = by_cat[cat]
        ok = [o for o in outcomes if o.status == "ok"]
        sols = [o.threshold for o in ok if o.threshold is not None]
        agg = aggregate_thresholds(sols).get("all") if sols else None
        out[cat] = {
            "n_users_fit": len(ok),
            "status_counts": dict(sorted(Counter(o.status for o in outcomes).items())),
            "aggregate_gof": aggregate_gof(o.fit.gof for o in ok if o.fit is not None),
            "mean_tau": None if agg is None else agg.mean_tau,
            "n_tau_excluded": 0 if agg is None else agg.n_excluded,
            "k_breakdown": {str(k): v for k, v in sorted(Counter(o.fit.K for o in ok if o.fit).items())},
        }
    return out


def build_report(
    series: Mapping[str, IntervalSeries],
    ingest_drops: Mapping[str, str],
    cfg: PipelineConfig,
    *,
    grades: Mapping[str, float | None] | None = None,
    completion: Mapping[str, bool] | None = None,
    cohorts: Mapping[str, str] | None = None,
    n_malformed_rows: int = 0,
) -> CourseReport:
    users = _process_all([series[k] for k in sorted(series)], cfg)
    drops = dict(ingest_drops)
    for u in users:
        if u.dropped is not None:
            drops[u.user_id] = u.dropped
    fitted = [u for u in users if u.dropped is None]
    ests = [u.pooled.estimate for u in fitted if u.pooled.estimate is not None]
    ratios = [e.on_task_ratio for e in ests if e.on_task_ratio is not None]
    sols = [u.pooled.threshold for u in fitted if u.pooled.threshold is not None]
    if cohorts is not None:
        missing = [s.user_id for s in sols if s.user_id not in cohorts]
        if missing:
            raise ConfigurationError(f"{len(missing)} user(s) lack a cohort label, e.g. {missing[0]!r}")
    report = CourseReport(
        users=users,
        drops=dict(sorted(drops.items())),
        n_users_total=len(series) + len(ingest_drops),
        aggregate_gof=aggregate_gof(e.gof for e in ests),
        mean_on_task_ratio=math.fsum(ratios) / len(ratios) if ratios else None,
        thresholds=aggregate_thresholds(sols, cohorts),
        k_breakdown=dict(sorted(Counter(u.pooled.fit.K for u in fitted if u.pooled.fit).items())),
        per_resource_summaries=_category_summaries(users) if cfg.per_resource else None,
        n_malformed_rows=n_malformed_rows,
    )
    if grades is not None:
        report.grade_correlation = grade_correlation(ests, grades)
    if completion is not None:
        report.completer_ratio = completer_ratio(ests, completion)
    return report


def run_pipeline(
    log_path: str | Path,
    cfg: PipelineConfig | None = None,
    *,
    grades: Mapping[str, float | None] | None = None,
    completion: Mapping[str, bool] | None = None,
    cohorts: Mapping[str, str] | None = None,
) -> CourseReport:
    cfg = cfg or PipelineConfig()
    parsed = read_track_log(log_path, cfg.delimiter)
    if not parsed.events:
        logger.warning("no events in %s", log_path)
    series, drops = extract_intervals(parsed.events, cfg.filters)
    return build_report(
        series,
        drops,
        cfg,
        grades=grades,
        completion=completion,
        cohorts=cohorts,
        n_malformed_rows=parsed.n_malformed,
    )


# --- side tables -------------------------------------------------------------

_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f"}


def read_user_column(path: str | Path, column: str, delimiter: str = ",") -> dict[str, str]:
    """Read ``user_id -> column`` from a delimited table with a header row."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        fields = reader.fieldnames or []
        if "user_id" not in fields:
            raise ConfigurationError(f"{path}: missing user_id column")
        if column not in fields:
            if len(fields) != 2:
                raise ConfigurationError(f"{path}: missing {column} column")
            column = fields[1]
        return {row["user_id"].strip(): (row[column] or "").strip() for row in reader if row.get("user_id")}


def read_grades(path: str | Path, delimiter: str = ",") -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    for user, text in read_user_column(path, "grade", delimiter).items():
        try:
            out[user] = float(text)
        except ValueError:
            out[user] = None
    return out


def read_completion(path: str | Path, delimiter: str = ",") -> dict[str, bool]:
    out: dict[str, bool] = {}
    for user, text in read_user_column(path, "completed", delimiter).items():
        flag = text.lower()
        if flag in _TRUE:
            out[user] = True
        elif flag in _FALSE:
            out[user] = False
    return out


def read_cohorts(path: str | Path, delimiter: str = ",") -> dict[str, str]:
    """Two-column ``user_id,label`` table; a header row is optional."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r]
    if rows and rows[0][0].strip() == "user_id":
        rows = rows[1:]
    cohorts: dict[str, str] = {}
    for r in rows:
        if len(r) < 2:
            raise ConfigurationError(f"{path}: cohort rows need user_id and label")
        user, label = r[0].strip(), r[1].strip()
        if user in cohorts and cohorts[user] != label:
            raise ConfigurationError(f"{path}: user {user!r} has two cohort labels")
        cohorts[user] = label
    return cohorts


ESTIMATE_COLUMNS = [
    "user_id",
    "n_intervals",
    "net_time_s",
    "T_s",
    "T_excluding_fast_s",
    "ratio",
    "M_on_s",
    "K",
    "gof",
    "converged",
]


def estimate_rows(report: CourseReport) -> list[dict[str, Any]]:
    rows = []
    for u in report.users:
        o = u.pooled
        if o.fit is None:
            continue
        e = o.estimate
        rows.append(
            {
                "user_id": u.user_id,
                "n_intervals": o.n_intervals,
                "net_time_s": o.net_time,
                "T_s": e.T if e else None,
                "T_excluding_fast_s": e.T_excluding_fast if e else None,
                "ratio": e.on_task_ratio if e else None,
                "M_on_s": e.M_on if e else None,
                "K": o.fit.K,
                "gof": o.fit.gof,
                "converged": o.fit.converged,
            }
        )
    return rows


def write_table(rows: Sequence[Mapping[str, Any]], columns: Sequence[str], out: IO[str], fmt: str = "csv") -> None:
    """Delimited text with 6-decimal floats, or JSON with full precision."""
    if fmt == "json":
        json.dump([{c: r.get(c) for c in columns} for r in rows], out, indent=2, sort_keys=False)
        out.write("\n")
        return
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_cell(r.get(c)) for c in columns])


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}" if math.isfinite(value) else str(value)
    return str(value)


def write_figure_data(report: CourseReport, directory: str | Path) -> list[Path]:
    """Plot-ready tables: per-user thresholds by category and fitted components."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    thr_rows: list[dict[str, Any]] = []
    comp_rows: list[dict[str, Any]] = []
    for u in report.users:
        for o in [u.pooled, *u.categories]:
            if o.threshold is not None:
                thr_rows.append(
                    {"user_id": u.user_id, "category": o.category, "tau_s": o.threshold.tau, "case": o.threshold.case.value}
                )
            if o.fit is not None and o.status == "ok":
                p = o.fit.params
                dm = o.fit.direct_means if o.fit.direct_means is not None else [None] * o.fit.K
                for k in range(o.fit.K):
                    comp_rows.append(
                        {
                            "user_id": u.user_id,
                            "category": o.category,
                            "k": k + 1,
                            "weight": float(p.weights[k]),
                            "mu_log_s": float(p.means[k]),
                            "sigma_log_s": float(p.stds[k]),
                            "direct_mean_s": None if dm[k] is None else float(dm[k]),
                        }
                    )
    paths = []
    for name, rows, cols in [
        ("thresholds_by_user.csv", thr_rows, ["user_id", "category", "tau_s", "case"]),
        ("fit_components.csv", comp_rows, ["user_id", "category", "k", "weight", "mu_log_s", "sigma_log_s", "direct_mean_s"]),
    ]:
        path = directory / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            write_table(rows, cols, fh)
        paths.append(path)
    return paths
