import math

import numpy as np
import pytest

from qg2l.spectral import Grid, LayerWeights, Operators, random_field

# acceptance verdicts, printed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture
def grid():
    return Grid(2 * math.pi, 32)


@pytest.fixture
def small_grid():
    return Grid(2 * math.pi, 16)


@pytest.fixture
def weights():
    return LayerWeights(h1=0.6, h2=1.5, F1=2.5, F2=1.0)


@pytest.fixture
def ops(grid, weights):
    return Operators(grid, weights)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def rand2(grid, rng, slope=1.0):
    return random_field(grid, rng, slope=slope)
