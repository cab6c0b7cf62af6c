import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from slowfast.cell import critical_value, freeze
from slowfast.grid import make_box_grid
from slowfast.problem import builtin_problem

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def quadcell():
    return builtin_problem("quadcell")


@pytest.fixture(scope="session")
def quadcell2d():
    return builtin_problem("quadcell2d")


@pytest.fixture(scope="session")
def y161():
    return make_box_grid([-2.0], [2.0], [161])


@pytest.fixture(scope="session")
def crit0(quadcell, y161):
    """quadcell cell at x0 = 0, p0 = 0 on [-2, 2] with 161 nodes."""
    return critical_value(freeze(quadcell, [0.0], [0.0]), y161, 1e-3)


@pytest.fixture(scope="session")
def wide_crit(quadcell):
    """Same cell on [-6.5, 6.5], wide enough for the weighted-distance construction."""
    grid = make_box_grid([-6.5], [6.5], [261])
    return critical_value(freeze(quadcell, [0.0], [0.0]), grid, 1e-3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
