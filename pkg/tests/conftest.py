import numpy as np
import pytest

from slammot.geometry import Pose2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pose(rng, scale=10.0) -> Pose2:
    return Pose2(rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-np.pi, np.pi))


def central_difference(f, x, h=1e-6):
    """Jacobian of ``f`` at ``x`` by central differences (additive perturbations)."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        d = np.zeros_like(x)
        d[i] = h
        J[:, i] = (np.asarray(f(x + d)) - np.asarray(f(x - d))).ravel() / (2 * h)
    return J


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
