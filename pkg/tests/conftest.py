import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pilotcluster.geometry import generate_deployment
from pilotcluster.propagation import estimate_mu, stats_from_matrices

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def dep16():
    return generate_deployment(16, rng=20240601)


@pytest.fixture(scope="session")
def stats16(dep16):
    return estimate_mu(dep16, 4000, rng=1)


@pytest.fixture(scope="session")
def dep6():
    return generate_deployment(6, rng=77)


@pytest.fixture(scope="session")
def stats6(dep6):
    return estimate_mu(dep6, 4000, rng=2)


def synthetic_stats(L, coupling, rng=None, second=None):
    """Uniform off-diagonal coupling, or random couplings below ``coupling``."""
    if rng is None:
        mu1 = np.full((L, L), float(coupling))
    else:
        mu1 = np.random.default_rng(rng).uniform(0.01, coupling, size=(L, L))
    mu2 = mu1**2 * 1.5 if second is None else np.full((L, L), float(second))
    mu2 = np.minimum(np.maximum(mu2, mu1**2), 1.0)
    np.fill_diagonal(mu1, 1.0)
    np.fill_diagonal(mu2, 1.0)
    return stats_from_matrices(mu1, mu2)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Append ``(criterion, passed, detail)``; printed after the run."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
