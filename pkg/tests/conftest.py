import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from angsync.kernels import backends

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BACKENDS = sorted(backends())


@pytest.fixture(params=BACKENDS)
def kernel_impl(request):
    return backends()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_diff(f, x, h=1e-5):
    """Central differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda s: (int(s.rstrip("ab")), s)):
        terminalreporter.write_line(ACCEPTANCE[key])
