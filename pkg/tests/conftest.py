import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cnls.grid import Grid

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def sech_soliton(x, kappa=1.0):
    """Closed-form 1D solution of -u'' + kappa u = u^3."""
    return np.sqrt(2.0 * kappa) / np.cosh(np.sqrt(kappa) * x)


@pytest.fixture(scope="session")
def fine_line():
    return Grid(1, 20.0, 4097)


@pytest.fixture(scope="session")
def line():
    # cheaper 1D grid for structural tests
    return Grid(1, 16.0, 1025)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
