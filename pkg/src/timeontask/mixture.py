"""One-dimensional Gaussian mixtures on log-intervals.

Fitting is plain Expectation-Maximization with a variance floor, quantile
initialisation and seeded restarts. Candidate component counts are compared
by BIC with ``3K - 1`` free parameters.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .errors import InsufficientData

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
EMPTY_COMPONENT_MASS = 1e-12


@dataclass(frozen=True, slots=True)
class EmConfig:
    max_iterations: int = 1000
    rel_tolerance: float = 1e-8
    sigma_floor: float = 1e-3
    restarts: int = 3
    seed: int = 0
    k_range: tuple[int, ...] = (3, 4, 5)
    min_points: int = 10

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.rel_tolerance <= 0 or self.sigma_floor <= 0:
            raise ValueError("rel_tolerance and sigma_floor must be positive")
        if not self.k_range or min(self.k_range) < 1:
            raise ValueError("k_range must be a non-empty set of positive integers")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        object.__setattr__(self, "k_range", tuple(sorted(set(self.k_range))))


@dataclass(frozen=True)
class MixtureParams:
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self) -> None:
        for name in ("weights", "means", "stds"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (len(self.weights) == len(self.means) == len(self.stds)):
            raise ValueError("weights, means and stds must have equal length")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")

    @property
    def K(self) -> int:
        return len(self.weights)

    def permuted(self, order: Sequence[int]) -> MixtureParams:
        return MixtureParams(self.weights[order], self.means[order], self.stds[order])


@dataclass(frozen=True)
class MixtureFit:
    """Result of fitting one mixture.

    ``direct_means`` and ``gof`` are ``None`` on the raw output of
    :func:`fit_em`; :func:`finalize` fills them in and orders components.
    ``gof`` stays ``None`` when the correlation is undefined.
    """

    params: MixtureParams
    memberships: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    direct_means: np.ndarray | None = None
    empty: np.ndarray | None = None
    gof: float | None = None
    ll_trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def K(self) -> int:
        return self.params.K

    @property
    def n(self) -> int:
        return self.memberships.shape[0]

    @property
    def bic(self) -> float:
        return bic(self.log_likelihood, self.K, self.n)

    @property
    def gof_squared(self) -> float | None:
        return None if self.gof is None else self.gof**2

    def to_json(self) -> dict[str, Any]:
        """Cacheable summary; memberships are not included."""
        return {
            "K": self.K,
            "n": self.n,
            "weights": self.params.weights.tolist(),
            "means": self.params.means.tolist(),
            "stds": self.params.stds.tolist(),
            "direct_means": None if self.direct_means is None else self.direct_means.tolist(),
            "log_likelihood": self.log_likelihood,
            "bic": self.bic,
            "iterations": self.iterations,
            "converged": self.converged,
            "gof": self.gof,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> MixtureFit:
        params = MixtureParams(data["weights"], data["means"], data["stds"])
        dm = data.get("direct_means")
        return cls(
            params=params,
            # placeholder with the right row count so n and bic survive a round trip
            memberships=np.zeros((int(data["n"]), 0)),
            log_likelihood=float(data["log_likelihood"]),
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
            direct_means=None if dm is None else np.asarray(dm, dtype=float),
            gof=data.get("gof"),
        )


def bic(log_likelihood: float, K: int, n: int) -> float:
    return -2.0 * log_likelihood + (3 * K - 1) * math.log(n)


def derive_seed(seed: int, *keys: object) -> int:
    """Stable 64-bit seed from a global seed and arbitrary keys."""
    h = hashlib.sha256(repr((seed,) + tuple(str(k) for k in keys)).encode())
    return int.from_bytes(h.digest()[:8], "little")


def log_transform(deltas: Iterable[float]) -> np.ndarray:
    d = np.asarray(deltas, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("log_transform needs strictly positive intervals")
    return np.log(d)


def init_params(
    x: np.ndarray,
    K: int,
    sigma_floor: float = 1e-3,
    rng: np.random.Generator | None = None,
) -> MixtureParams:
    """Quantile initialisation; passing ``rng`` adds a uniform jitter to the means."""
    x = np.asarray(x, dtype=float)
    if len(x) < K:
        raise InsufficientData(f"{len(x)} points cannot support {K} components")
    q = (np.arange(1, K + 1) - 0.5) / K
    mu = np.quantile(x, q)
    spread = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
    sigma = np.full(K, max(spread / K, sigma_floor))
    if rng is not None:
        mu = mu + rng.uniform(-spread, spread, size=K)
    return MixtureParams(np.full(K, 1.0 / K), mu, sigma)


def _e_step(x: np.ndarray, w: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> tuple[np.ndarray, float]:
    # responsibilities are laid out (K, N): reductions over the short axis are much cheaper
    log_w = np.log(w, where=w > 0, out=np.full(len(w), -np.inf))
    z = (x - mu[:, None]) / sigma[:, None]
    lj = (log_w - np.log(sigma) - LOG_SQRT_2PI)[:, None] - 0.5 * z * z
    top = np.maximum.reduce(lj, axis=0)
    lj -= top
    np.exp(lj, out=lj)
    total = np.add.reduce(lj, axis=0)
    lj /= total
    return lj, float(top.sum() + np.log(total).sum())


def _m_step(
    x: np.ndarray, p: np.ndarray, mu_old: np.ndarray, sigma_old: np.ndarray, floor: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nk = p.sum(axis=1)
    w = nk / nk.sum()
    live = nk > EMPTY_COMPONENT_MASS
    safe = np.where(live, nk, 1.0)
    mu = np.where(live, (p @ x) / safe, mu_old)
    d = x - mu[:, None]
    var = np.einsum("kn,kn->k", p, d * d) / safe
    sigma = np.where(live, np.sqrt(np.maximum(var, floor * floor)), sigma_old)
    return w, mu, sigma


def _run_em(x: np.ndarray, start: MixtureParams, cfg: EmConfig) -> MixtureFit:
    w, mu, sigma = start.weights, start.means, start.stds
    p, ll = _e_step(x, w, mu, sigma)
    trace = [ll]
    converged = False
    it = 0
    while it < cfg.max_iterations:
        it += 1
        w, mu, sigma = _m_step(x, p, mu, sigma, cfg.sigma_floor)
        p_next, ll_next = _e_step(x, w, mu, sigma)
        trace.append(ll_next)
        if abs(ll_next - ll) <= cfg.rel_tolerance * abs(ll):
            converged = True
            ll = ll_next
            break
        p, ll = p_next, ll_next
    # p is the membership the final parameters were estimated from
    params = MixtureParams(w / w.sum(), mu, sigma)
    return MixtureFit(params, p.T.copy(), ll, it, converged, ll_trace=tuple(trace))


def fit_em(x: np.ndarray, K: int, cfg: EmConfig | None = None, seed: int | None = None) -> MixtureFit:
    """Fit a K-component mixture to ``x``; best log-likelihood over restarts.

    Converged restarts are preferred over non-converged ones. Components are
    left in the order EM produced them.
    """
    cfg = cfg or EmConfig()
    x = np.asarray(x, dtype=float)
    if len(x) < max(K, cfg.min_points):
        raise InsufficientData(f"{len(x)} points, need at least {max(K, cfg.min_points)}")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    best: MixtureFit | None = None
    for r in range(cfg.restarts):
        start = init_params(x, K, cfg.sigma_floor, rng if r > 0 else None)
        fit = _run_em(x, start, cfg)
        if best is None or (fit.converged, fit.log_likelihood) > (best.converged, best.log_likelihood):
            best = fit
    assert best is not None
    return best


def direct_component_means(deltas: np.ndarray, memberships: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Membership-weighted means of the raw intervals.

    Returns ``(m, empty)``; components with no mass get ``m = 0`` and are
    flagged in ``empty``.
    """
    deltas = np.asarray(deltas, dtype=float)
    memberships = np.asarray(memberships, dtype=float)
    if memberships.ndim != 2 or memberships.shape[0] != len(deltas):
        raise ValueError(f"membership shape {memberships.shape} does not match {len(deltas)} intervals")
    mass = memberships.sum(axis=0)
    empty = mass < EMPTY_COMPONENT_MASS
    m = np.where(empty, 0.0, (deltas @ memberships) / np.where(empty, 1.0, mass))
    return m, empty


def lognormal_theoretical_means(params: MixtureParams) -> np.ndarray:
    """Closed-form log-normal means; diagnostic only."""
    return np.exp(params.means + 0.5 * params.stds**2)


def order_components(fit: MixtureFit) -> MixtureFit:
    """Reorder components by increasing direct mean (ties: mean, then std of the log)."""
    if fit.direct_means is None:
        raise ValueError("direct means must be computed before ordering")
    p = fit.params
    order = np.lexsort((p.stds, p.means, fit.direct_means))
    return replace(
        fit,
        params=p.permuted(order),
        memberships=fit.memberships[:, order],
        direct_means=fit.direct_means[order],
        empty=None if fit.empty is None else fit.empty[order],
    )


def mixture_cdf(x: np.ndarray, params: MixtureParams) -> np.ndarray:
    z = (np.asarray(x, dtype=float)[:, None] - params.means) / params.stds
    return ndtr(z) @ params.weights


def goodness_of_fit(x: np.ndarray, fit: MixtureFit | MixtureParams) -> float | None:
    """Pearson correlation of the empirical and fitted CDFs at the sample points.

    Returns ``None`` when either CDF has zero variance.
    """
    params = fit.params if isinstance(fit, MixtureFit) else fit
    x = np.asarray(x, dtype=float)
    if len(x) < 3:
        raise InsufficientData("goodness of fit needs at least 3 points")
    return cdf_correlation(empirical_cdf(x), mixture_cdf(x, params))


def empirical_cdf(x: np.ndarray) -> np.ndarray:
    """rank / N at each sample point, ties sharing their average rank."""
    return rankdata(x, method="average") / len(x)


def cdf_correlation(observed: np.ndarray, fitted: np.ndarray) -> float | None:
    if np.ptp(observed) == 0 or np.ptp(fitted) == 0:
        return None
    rho = float(np.corrcoef(observed, fitted)[0, 1])
    return rho if math.isfinite(rho) else None


def finalize(fit: MixtureFit, x: np.ndarray, deltas: np.ndarray) -> MixtureFit:
    """Attach direct means and goodness of fit, then order components."""
    m, empty = direct_component_means(deltas, fit.memberships)
    fit = order_components(replace(fit, direct_means=m, empty=empty))
    return replace(fit, gof=goodness_of_fit(x, fit) if len(x) >= 3 else None)


def select_model(
    x: np.ndarray, deltas: np.ndarray, cfg: EmConfig | None = None, seed: int | None = None
) -> MixtureFit:
    """Fit every feasible K and keep the converged fit with the smallest BIC.

    If no candidate converges the best non-converged fit is returned with
    ``converged=False`` so the caller can drop the user.
    """
    cfg = cfg or EmConfig()
    x = np.asarray(x, dtype=float)
    feasible = [k for k in cfg.k_range if k <= len(x)]
    if len(x) < cfg.min_points or not feasible:
        raise InsufficientData(f"{len(x)} points is too few for K in {cfg.k_range}")
    fits = [fit_em(x, k, cfg, seed=seed) for k in feasible]
    return finalize(best_by_bic(fits), x, deltas)


def best_by_bic(fits: Sequence[MixtureFit]) -> MixtureFit:
    """Smallest BIC among converged fits, ties to smaller K; falls back to all fits."""
    pool = [f for f in fits if f.converged] or list(fits)
    return min(pool, key=lambda f: (f.bic, f.K))


def effective_components(fit: MixtureFit, rtol: float = 1e-6) -> int:
    """Number of distinct non-empty components.

    Components whose means and stds agree within ``rtol`` count once, so a
    fit collapsed onto identical data reports 1 whatever its nominal K.
    """
    p = fit.params
    live = p.weights > EMPTY_COMPONENT_MASS
    if fit.empty is not None:
        live &= ~fit.empty
    distinct: list[tuple[float, float]] = []
    for mu, sd in zip(p.means[live], p.stds[live]):
        if not any(
            math.isclose(mu, m2, rel_tol=rtol, abs_tol=rtol) and math.isclose(sd, s2, rel_tol=rtol, abs_tol=rtol)
            for m2, s2 in distinct
        ):
            distinct.append((float(mu), float(sd)))
    return len(distinct)
