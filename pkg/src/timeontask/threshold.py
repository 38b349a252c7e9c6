"""Thresholded time-on-task and the effective-threshold solver.

With a cutoff ``tau`` an interval counts as on-task when ``delta < tau``, and
the total is ``N`` times the mean of the selected intervals. As a function of
``tau`` that total is a step function: constant between consecutive distinct
intervals (a "shelf") and jumping upward at each observed value.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigurationError

GLOBAL_COHORT = "all"


class Marker(enum.Enum):
    BELOW_SUPPORT = "below_support"


BELOW_SUPPORT = Marker.BELOW_SUPPORT


class Case(str, enum.Enum):
    JUMP = "jump"
    ZERO_SHELF = "zero_shelf"
    NONE = "none"


@dataclass(frozen=True, slots=True)
class ThresholdSolution:
    user_id: str
    tau: float | None
    case: Case
    F_left: float | None = None
    F_right: float | None = None
    shelf_bounds: tuple[float, float] | None = None


@dataclass(frozen=True, slots=True)
class ThresholdAggregate:
    cohort: str
    mean_tau: float | None
    n_users: int
    n_excluded: int


def thresholded_estimate(deltas: Iterable[float], tau: float) -> float | Marker:
    """``N`` times the mean of intervals strictly shorter than ``tau``.

    Returns :data:`BELOW_SUPPORT` when no interval is selected.
    """
    d = np.asarray(deltas, dtype=float)
    if d.size == 0:
        raise ValueError("deltas must be non-empty")
    if not tau > 0:
        raise ValueError("tau must be positive")
    chosen = d[d < tau]
    if chosen.size == 0:
        return BELOW_SUPPORT
    return len(d) * math.fsum(chosen) / chosen.size


def shelf_table(deltas: Iterable[float]) -> tuple[np.ndarray, np.ndarray]:
    """Distinct sorted intervals ``u`` and the thresholded total on each shelf.

    Entry ``j`` of the totals holds for ``tau`` in ``(u[j], u[j+1]]``; the last
    entry covers everything above ``u[-1]``.
    """
    d = np.sort(np.asarray(deltas, dtype=float))
    u, counts = np.unique(d, return_counts=True)
    totals = len(d) * np.cumsum(u * counts) / np.cumsum(counts)
    return u, totals


def effective_threshold(deltas: Iterable[float], T: float, user_id: str = "") -> ThresholdSolution:
    """Solve ``thresholded_estimate(deltas, tau) = T`` over the shelves.

    A shelf within ``1e-9 * max(1, T)`` of ``T`` wins (midpoint returned);
    otherwise the sign change from a negative to a positive shelf gives the
    separating interval value; otherwise there is no solution. On the
    unbounded top shelf the returned ``tau`` is the smallest float above the
    largest interval.
    """
    d = np.asarray(deltas, dtype=float)
    if d.size == 0:
        raise ValueError("deltas must be non-empty")
    u, totals = shelf_table(d)
    F = totals - T
    atol = 1e-9 * max(1.0, abs(T))

    hits = np.flatnonzero(np.abs(F) <= atol)
    if hits.size:
        j = int(hits[0])
        if j + 1 < len(u):
            lo, hi = float(u[j]), float(u[j + 1])
            tau = 0.5 * (lo + hi)
        else:
            lo, hi = float(u[j]), math.inf
            tau = float(np.nextafter(u[j], math.inf))
        return ThresholdSolution(user_id, tau, Case.ZERO_SHELF, float(F[j]), float(F[j]), (lo, hi))

    cross = np.flatnonzero((F[:-1] < 0) & (F[1:] > 0))
    if cross.size:
        j = int(cross[0])
        return ThresholdSolution(user_id, float(u[j + 1]), Case.JUMP, float(F[j]), float(F[j + 1]))

    return ThresholdSolution(user_id, None, Case.NONE)


def aggregate_thresholds(
    solutions: Iterable[ThresholdSolution], cohorts: Mapping[str, str] | None = None
) -> dict[str, ThresholdAggregate]:
    """Average ``tau`` per cohort, skipping users without a solution."""
    taus: dict[str, list[float]] = defaultdict(list)
    excluded: dict[str, int] = defaultdict(int)
    for sol in solutions:
        if cohorts is None:
            label = GLOBAL_COHORT
        elif sol.user_id in cohorts:
            label = cohorts[sol.user_id]
        else:
            raise ConfigurationError(f"user {sol.user_id!r} has no cohort label")
        if sol.case is Case.NONE or sol.tau is None:
            excluded[label] += 1
            taus.setdefault(label, [])
        else:
            taus[label].append(sol.tau)
    return {
        label: ThresholdAggregate(
            label,
            math.fsum(values) / len(values) if values else None,
            len(values),
            excluded[label],
        )
        for label, values in sorted(taus.items())
    }
