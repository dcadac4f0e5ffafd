import numpy as np
import pytest

from bhtsne import _accel


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    previous = _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(20181004)


def blobs(n, d, clusters, seed, sep=30.0, spread=1.0):
    r = np.random.default_rng(seed)
    centers = r.normal(size=(clusters, d)) * sep
    labels = np.arange(n) % clusters
    return centers[labels] + r.normal(size=(n, d)) * spread, labels


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
