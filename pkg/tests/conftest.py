import numpy as np
import pytest

from twophase.grid import unit_grid

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def grid2():
    return unit_grid((4, 4))


@pytest.fixture
def grid3():
    return unit_grid((3, 2, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
