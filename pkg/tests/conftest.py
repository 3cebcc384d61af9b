import numpy as np
import pytest

from quantum_lorenz import IntegratorConfig, LorenzParams


@pytest.fixture(scope="session")
def canonical():
    return LorenzParams(10.0, 28.0, 8.0 / 3.0)


@pytest.fixture(scope="session")
def kus_params():
    # beta = 2 sigma: p1^2 - 2 sigma p3 decays exactly
    return LorenzParams(sigma=10.0, tau=28.0, beta=20.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_points(rng, n):
    """Points spread over a box containing the canonical attractor."""
    lo = np.array([-20.0, -25.0, 0.0])
    hi = np.array([20.0, 25.0, 50.0])
    return lo + (hi - lo) * rng.random((n, 3))


RK4_FINE = IntegratorConfig(method="rk4", step=1e-5)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
