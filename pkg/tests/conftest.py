import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from timeontask.mixture import MixtureFit, MixtureParams

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large]
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def make_fit(weights, direct_means, means=None, stds=None, memberships=None, converged=True):
    """Hand-built, already ordered fit for estimator tests."""
    K = len(weights)
    means = np.arange(K, dtype=float) if means is None else means
    stds = np.ones(K) if stds is None else stds
    if memberships is None:
        memberships = np.tile(np.asarray(weights, dtype=float), (10, 1))
    return MixtureFit(
        params=MixtureParams(weights, means, stds),
        memberships=np.asarray(memberships, dtype=float),
        log_likelihood=0.0,
        iterations=1,
        converged=converged,
        direct_means=np.asarray(direct_means, dtype=float),
    )


@pytest.fixture
def record_criterion():
    def record(name: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
