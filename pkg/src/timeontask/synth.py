"""Synthetic track logs drawn from a known log-normal mixture."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Sequence

import numpy as np

from .errors import ConfigurationError
from .ingest import ClickEvent


@dataclass(frozen=True, slots=True)
class Component:
    weight: float
    mu: float
    sigma: float
    label: str = "on"

    @property
    def mean(self) -> float:
        return math.exp(self.mu + 0.5 * self.sigma**2)


@dataclass(frozen=True)
class GeneratorSpec:
    n_users: int
    intervals_per_user: int | tuple[int, int]
    components: tuple[Component, ...]
    start_time: float = 1_451_606_400.0
    resource_labels: dict[str, float] | None = None
    seed: int = 0
    user_prefix: str = "u"

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        if self.n_users < 0:
            raise ConfigurationError("n_users must be non-negative")
        lo, hi = self.interval_bounds
        if not 1 <= lo <= hi:
            raise ConfigurationError("intervals_per_user must be a positive int or a (lo, hi) range")
        if not self.components:
            raise ConfigurationError("at least one component is required")
        if abs(sum(c.weight for c in self.components) - 1.0) > 1e-9:
            raise ConfigurationError("component weights must sum to 1")
        for c in self.components:
            if c.weight < 0 or not c.sigma > 0 or c.label not in ("on", "off"):
                raise ConfigurationError(f"invalid component {c}")
        if self.resource_labels is not None:
            w = np.asarray(list(self.resource_labels.values()), dtype=float)
            if not self.resource_labels or np.any(w < 0) or w.sum() <= 0:
                raise ConfigurationError("resource label weights must be non-negative with positive sum")

    @property
    def interval_bounds(self) -> tuple[int, int]:
        if isinstance(self.intervals_per_user, int):
            return self.intervals_per_user, self.intervals_per_user
        lo, hi = self.intervals_per_user
        return int(lo), int(hi)

    @property
    def on_mean(self) -> float | None:
        """Expected duration of an on-labeled interval."""
        on = [c for c in self.components if c.label == "on"]
        w = sum(c.weight for c in on)
        if w <= 0:
            return None
        return sum(c.weight * c.mean for c in on) / w

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> GeneratorSpec:
        try:
            ipu = data["intervals_per_user"]
            labels = data.get("resource_labels")
            if isinstance(labels, list):
                labels = {str(k): float(v) for k, v in labels}
            return cls(
                n_users=int(data["n_users"]),
                intervals_per_user=ipu if isinstance(ipu, int) else tuple(ipu),
                components=tuple(Component(**c) for c in data["components"]),
                start_time=float(data.get("start_time", 1_451_606_400.0)),
                resource_labels=labels,
                seed=int(data.get("seed", 0)),
                user_prefix=str(data.get("user_prefix", "u")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid generator spec: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> GeneratorSpec:
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_json(data)


@dataclass
class UserTruth:
    user_id: str
    deltas: np.ndarray
    components: np.ndarray
    on: np.ndarray
    on_mean: float | None

    @property
    def n(self) -> int:
        return len(self.deltas)

    @property
    def expected_T(self) -> float | None:
        return None if self.on_mean is None else self.n * self.on_mean

    @property
    def realized_on(self) -> float:
        return math.fsum(self.deltas[self.on])

    @property
    def realized_T_with_credit(self) -> float | None:
        """Realized on-task sum plus one expected on-task duration per off interval."""
        if self.on_mean is None:
            return None
        return self.realized_on + int(np.sum(~self.on)) * self.on_mean


@dataclass
class GroundTruth:
    users: dict[str, UserTruth] = field(default_factory=dict)

    def rows(self) -> list[dict[str, Any]]:
        return [
            {
                "user_id": u.user_id,
                "n_intervals": u.n,
                "n_on": int(u.on.sum()),
                "net_time_s": math.fsum(u.deltas),
                "true_M_on_s": u.on_mean,
                "expected_T_s": u.expected_T,
                "realized_on_s": u.realized_on,
                "realized_T_credit_s": u.realized_T_with_credit,
            }
            for u in self.users.values()
        ]


def generate(spec: GeneratorSpec) -> tuple[list[ClickEvent], GroundTruth]:
    """Draw click streams for every user in ``spec``.

    Each user gets its own generator seeded from ``(spec.seed, index)``. The
    recorded intervals are the differences of the emitted timestamps, so they
    survive a round trip through ingest bit for bit.
    """
    weights = np.array([c.weight for c in spec.components])
    mus = np.array([c.mu for c in spec.components])
    sigmas = np.array([c.sigma for c in spec.components])
    is_on = np.array([c.label == "on" for c in spec.components])
    lo, hi = spec.interval_bounds
    if spec.resource_labels:
        res_names = list(spec.resource_labels)
        res_w = np.array([spec.resource_labels[k] for k in res_names], dtype=float)
        res_w /= res_w.sum()

    width = max(5, len(str(max(spec.n_users - 1, 0))))
    events: list[ClickEvent] = []
    truth = GroundTruth()
    for index in range(spec.n_users):
        rng = np.random.default_rng([spec.seed, index])
        user = f"{spec.user_prefix}{index:0{width}d}"
        n = int(rng.integers(lo, hi + 1))
        comp = rng.choice(len(weights), size=n, p=weights)
        raw = np.exp(rng.normal(mus[comp], sigmas[comp]))
        stamps = spec.start_time + np.concatenate(([0.0], np.cumsum(raw)))
        labels: Sequence[str | None]
        if spec.resource_labels:
            labels = [res_names[i] for i in rng.choice(len(res_names), size=n + 1, p=res_w)]
        else:
            labels = [None] * (n + 1)
        events.extend(ClickEvent(user, float(t), r) for t, r in zip(stamps, labels))
        truth.users[user] = UserTruth(user, np.diff(stamps), comp, is_on[comp], spec.on_mean)
    return events, truth


def write_track_log(events: Sequence[ClickEvent], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    with_resource = any(e.resource_type for e in events)
    writer.writerow(["user_id", "timestamp", "resource_type"] if with_resource else ["user_id", "timestamp"])
    for e in events:
        row = [e.user_id, repr(e.timestamp)]
        if with_resource:
            row.append(e.resource_type or "")
        writer.writerow(row)


def write_truth(truth: GroundTruth, out: IO[str]) -> None:
    rows = truth.rows()
    fields = list(rows[0]) if rows else ["user_id"]
    writer = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
