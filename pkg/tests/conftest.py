import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "pplab", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("pplab")


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
