import numpy as np
import pytest

from popdyn import _kernels
from popdyn.dataset import generate_synthetic, repair_records


@pytest.fixture(params=sorted(_kernels.backends()))
def backend(request):
    """Each available kernel implementation in turn."""
    return _kernels.backends()[request.param]


@pytest.fixture(scope="session")
def small_synthetic():
    return repair_records(generate_synthetic(300, 4, 0.02, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
