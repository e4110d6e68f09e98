import numpy as np
import pytest

from pod2g.fixtures import laplacian_1d, laplacian_2d, random_spd


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def lap1d_9():
    return laplacian_1d(9)


@pytest.fixture(scope="session")
def lap2d_12():
    return laplacian_2d(12)


@pytest.fixture(scope="session")
def spd_15():
    return random_spd(15, 0.3, 3)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
