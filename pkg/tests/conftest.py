import pytest

from duffing_sp.integrator import SchemeConfig, integrate
from duffing_sp.model import DuffingParams, State


@pytest.fixture(scope="session")
def baseline_trajectory():
    """(p, mu, alpha) = (3, 1, 1) from (2, 0), dt = 0.01, T = 5000, every 10th step stored."""
    return integrate(DuffingParams(3, 1.0, 1.0), SchemeConfig(0.01, 5000.0, record_stride=10), State(2.0, 0.0))


@pytest.fixture(scope="session")
def tail_trajectories():
    cfg = SchemeConfig(0.01, 5000.0, record_stride=10)
    return {
        p: integrate(DuffingParams(p, 1.0, 1.0), cfg, State(2.0, 0.0)) for p in (3, 5, 7)
    }
