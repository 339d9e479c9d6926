import numpy as np
import pytest

from tastegroup._kernels import _numpy

try:
    from tastegroup._kernels import _numba
except ImportError:  # pragma: no cover
    _numba = None

from acceptance_log import LINES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    if request.param == "numba":
        if _numba is None:
            pytest.skip("numba unavailable")
        return _numba
    return _numpy


def pytest_terminal_summary(terminalreporter):
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
