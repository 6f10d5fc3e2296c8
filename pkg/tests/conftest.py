import numpy as np
import pytest

from thinspec.cell import CellGrid
from thinspec.coefficients import CoefficientMatrix
from thinspec.direct import ThinGrid, solve_thin
from thinspec.effective import build_model
from thinspec.expr import parse

PI2 = np.pi ** 2

FLAT = "y2*(1-y2)"
H_STRIP = "(y2/(1-x1^2/2))*(1-y2/(1-x1^2/2))"
EPS_LIST = (0.2, 0.1, 0.05)


def h(x):
    return 1.0 - x ** 2 / 2.0


def strip(height):
    """Level set of the strip ``0 < y2 < height`` (height is expression text)."""
    return parse(f"(y2/({height}))*(1-y2/({height}))")


@pytest.fixture(scope="session")
def identity():
    return CoefficientMatrix.identity()


@pytest.fixture(scope="session")
def flat():
    return parse(FLAT)


@pytest.fixture(scope="session")
def hstrip():
    return parse(H_STRIP)


@pytest.fixture(scope="session")
def h_model(hstrip, identity):
    return build_model(hstrip, identity, CellGrid(128, 128))


@pytest.fixture(scope="session")
def h_direct(hstrip, identity):
    return {e: solve_thin(hstrip, identity, e, 2, ThinGrid(32, 128)) for e in EPS_LIST}


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
