"""Per-user time-on-task from an ordered mixture fit."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import EstimationError
from .mixture import MixtureFit, effective_components

DEGENERATE_WEIGHT = 1e-12


@dataclass(frozen=True, slots=True)
class TimeOnTaskEstimate:
    user_id: str
    n_intervals: int
    net_time: float
    T: float | None
    M_on: float | None
    T_excluding_fast: float | None
    K_used: int
    gof: float | None
    converged: bool = True
    # same quantity without renormalising by the middle weights
    T_excluding_fast_unnormalized: float | None = None

    @property
    def on_task_ratio(self) -> float | None:
        if self.T is None or self.net_time <= 0:
            return None
        return self.T / self.net_time


def net_time(deltas: Iterable[float]) -> float:
    return math.fsum(deltas)


def _require_means(fit: MixtureFit) -> tuple[np.ndarray, np.ndarray]:
    if fit.direct_means is None:
        raise ValueError("fit has no direct means; run mixture.finalize first")
    return fit.params.weights, fit.direct_means


def on_task_mean(fit: MixtureFit) -> float:
    """Weighted mean duration of all components but the last (the off-task one)."""
    a, m = _require_means(fit)
    if fit.K < 2:
        raise EstimationError("cannot_split_on_off", "a single component has no off-task part")
    w = a[:-1]
    if w.sum() < DEGENERATE_WEIGHT:
        raise EstimationError("degenerate_weights", "on-task components carry no weight")
    if effective_components(fit) < 2:
        raise EstimationError("cannot_split_on_off", "all components coincide")
    return float(w @ m[:-1] / w.sum())


def time_on_task(fit: MixtureFit, n: int) -> tuple[float, float]:
    """Return ``(T, M_on)`` with ``T = n * M_on``."""
    m_on = on_task_mean(fit)
    return n * m_on, m_on


def time_on_task_excluding_fast(
    fit: MixtureFit, memberships: np.ndarray | None, n: int, *, normalized: bool = True
) -> float:
    """Time-on-task that discounts the fastest component.

    The effective interval count is ``n`` minus the total membership of
    component 1, and the per-interval duration averages components
    ``2..K-1``. With ``normalized=False`` the weighted sum is used unscaled.
    """
    a, m = _require_means(fit)
    if fit.K < 3:
        raise EstimationError("no_middle_components", "need at least 3 components")
    memberships = fit.memberships if memberships is None else memberships
    n_eff = n - float(np.sum(memberships[:, 0]))
    w = a[1:-1]
    weighted = float(w @ m[1:-1])
    if not normalized:
        return n_eff * weighted
    if w.sum() < DEGENERATE_WEIGHT:
        raise EstimationError("degenerate_weights", "middle components carry no weight")
    return n_eff * weighted / float(w.sum())


def estimate_user(user_id: str, deltas: np.ndarray, fit: MixtureFit) -> TimeOnTaskEstimate:
    """Assemble every per-user quantity; undefined ones come back as ``None``."""
    n = len(deltas)
    total = net_time(deltas)
    T = m_on = t_fast = t_fast_raw = None
    if fit.converged:
        try:
            T, m_on = time_on_task(fit, n)
        except EstimationError:
            pass
        if fit.K >= 3 and fit.memberships.shape[1] == fit.K:
            try:
                t_fast = time_on_task_excluding_fast(fit, None, n)
                t_fast_raw = time_on_task_excluding_fast(fit, None, n, normalized=False)
            except EstimationError:
                pass
    return TimeOnTaskEstimate(
        user_id=user_id,
        n_intervals=n,
        net_time=total,
        T=T,
        M_on=m_on,
        T_excluding_fast=t_fast,
        K_used=fit.K,
        gof=fit.gof,
        converged=fit.converged,
        T_excluding_fast_unnormalized=t_fast_raw,
    )
