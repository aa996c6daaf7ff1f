import numpy as np
import pytest

from normdeform.radial import make_grid
from normdeform.system import ground_state_omega

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def grid3():
    return make_grid(3, 20.0, 4096)


@pytest.fixture(scope="session")
def grid2():
    return make_grid(2, 20.0, 4096)


@pytest.fixture(scope="session")
def gs(grid3):
    return ground_state_omega(grid3)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
