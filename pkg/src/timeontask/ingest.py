"""Track-log parsing and per-user interval construction."""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

USER_COLUMN = "user_id"
TIME_COLUMN = "timestamp"
RESOURCE_COLUMN = "resource_type"

DROP_TOO_FEW_CLICKS = "too_few_clicks"
DROP_NO_INTERVALS = "no_valid_intervals"


@dataclass(frozen=True, slots=True)
class ClickEvent:
    user_id: str
    timestamp: float
    resource_type: str | None = None

    def __post_init__(self) -> None:
        if not self.user_id:
            raise ValueError("user_id must be non-empty")
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValueError(f"invalid timestamp {self.timestamp!r}")


@dataclass(frozen=True, slots=True)
class ResourceCategory:
    """Resource type of an interval.

    ``labels`` is empty for "unknown", holds one label for a pure category and
    two sorted labels for a mixed pair.
    """

    labels: tuple[str, ...] = ()

    @classmethod
    def unknown(cls) -> ResourceCategory:
        return cls(())

    @classmethod
    def single(cls, label: str) -> ResourceCategory:
        return cls((label,))

    @classmethod
    def mixed(cls, a: str, b: str) -> ResourceCategory:
        if a == b:
            raise ValueError("mixed pair needs two distinct labels")
        return cls(tuple(sorted((a, b))))

    @classmethod
    def parse(cls, text: str) -> ResourceCategory:
        if text == "unknown":
            return cls.unknown()
        parts = text.split("/")
        if len(parts) == 2:
            return cls.mixed(*parts)
        return cls.single(text)

    @property
    def is_unknown(self) -> bool:
        return not self.labels

    @property
    def is_mixed(self) -> bool:
        return len(self.labels) == 2

    def __str__(self) -> str:
        return "/".join(self.labels) if self.labels else "unknown"


@dataclass(frozen=True, slots=True)
class FilterConfig:
    min_clicks: int = 20
    min_interval: float = 0.1
    max_interval: float = 7200.0

    def __post_init__(self) -> None:
        if self.min_clicks < 2:
            raise ConfigurationError("min_clicks must be at least 2")
        if not 0 < self.min_interval < self.max_interval:
            raise ConfigurationError("need 0 < min_interval < max_interval")


@dataclass(frozen=True)
class IntervalSeries:
    """A user's retained inter-click intervals in seconds."""

    user_id: str
    deltas: np.ndarray
    categories: tuple[ResourceCategory, ...]

    def __post_init__(self) -> None:
        if len(self.deltas) != len(self.categories):
            raise ValueError("deltas and categories differ in length")

    @property
    def n(self) -> int:
        return len(self.deltas)

    @property
    def net_time(self) -> float:
        return math.fsum(self.deltas)


@dataclass
class ParseResult:
    events: list[ClickEvent] = field(default_factory=list)
    n_malformed: int = 0


def parse_timestamp(text: str) -> float:
    """Epoch seconds from a numeric string or an ISO-8601 datetime (UTC if naive)."""
    text = text.strip()
    try:
        value = float(text)
    except ValueError:
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        value = dt.timestamp()
    return value


def parse_track_log(stream: IO[bytes] | IO[str], delimiter: str = ",") -> ParseResult:
    """Read click events from a delimited table with a header row.

    Rows that cannot be parsed are counted in ``n_malformed`` and skipped. A
    header lacking ``user_id`` or ``timestamp`` raises ConfigurationError.
    """
    raw = stream.read()
    text = raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw
    result = ParseResult()
    if not text.strip():
        logger.warning("empty track log")
        return result

    reader = csv.reader(io.StringIO(text, newline=""), delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    missing = [c for c in (USER_COLUMN, TIME_COLUMN) if c not in header]
    if missing:
        raise ConfigurationError(f"track log is missing required column(s): {', '.join(missing)}")
    i_user = header.index(USER_COLUMN)
    i_time = header.index(TIME_COLUMN)
    i_res = header.index(RESOURCE_COLUMN) if RESOURCE_COLUMN in header else None

    for row in reader:
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            resource = None
            if i_res is not None and i_res < len(row):
                resource = row[i_res].strip() or None
            event = ClickEvent(row[i_user].strip(), parse_timestamp(row[i_time]), resource)
        except (IndexError, ValueError):
            result.n_malformed += 1
            continue
        result.events.append(event)

    if result.n_malformed:
        logger.warning("skipped %d malformed row(s)", result.n_malformed)
    return result


def read_track_log(path: str | Path, delimiter: str = ",") -> ParseResult:
    with open(path, "rb") as fh:
        return parse_track_log(fh, delimiter=delimiter)


def categorize_interval(a: ClickEvent, b: ClickEvent) -> ResourceCategory:
    if not a.resource_type or not b.resource_type:
        return ResourceCategory.unknown()
    if a.resource_type == b.resource_type:
        return ResourceCategory.single(a.resource_type)
    return ResourceCategory.mixed(a.resource_type, b.resource_type)


def _sort_key(event: ClickEvent) -> tuple[float, str]:
    # the label tie-break makes the result independent of input row order
    return event.timestamp, event.resource_type or ""


def extract_intervals(
    events: Iterable[ClickEvent], cfg: FilterConfig | None = None
) -> tuple[dict[str, IntervalSeries], dict[str, str]]:
    """Group events by user and build filtered interval series.

    Returns ``(series_by_user, drops)`` where ``drops`` maps each discarded
    user to its reason. Differences are formed over the full sorted click
    sequence and out-of-range differences are then removed one by one.
    """
    cfg = cfg or FilterConfig()
    by_user: dict[str, list[ClickEvent]] = defaultdict(list)
    for ev in events:
        by_user[ev.user_id].append(ev)

    series: dict[str, IntervalSeries] = {}
    drops: dict[str, str] = {}
    for user in sorted(by_user):
        clicks = sorted(by_user[user], key=_sort_key)
        if len(clicks) < cfg.min_clicks:
            drops[user] = DROP_TOO_FEW_CLICKS
            continue
        deltas: list[float] = []
        cats: list[ResourceCategory] = []
        for a, b in zip(clicks, clicks[1:]):
            d = b.timestamp - a.timestamp
            if cfg.min_interval <= d <= cfg.max_interval:
                deltas.append(d)
                cats.append(categorize_interval(a, b))
        if not deltas:
            drops[user] = DROP_NO_INTERVALS
            continue
        series[user] = IntervalSeries(user, np.asarray(deltas, dtype=float), tuple(cats))
    return series, drops


def stratify(series: IntervalSeries) -> dict[ResourceCategory, IntervalSeries]:
    """Partition one user's intervals by resource category."""
    idx: dict[ResourceCategory, list[int]] = defaultdict(list)
    for i, cat in enumerate(series.categories):
        idx[cat].append(i)
    return {
        cat: IntervalSeries(series.user_id, series.deltas[rows], (cat,) * len(rows))
        for cat, rows in sorted(idx.items(), key=lambda kv: str(kv[0]))
    }
