import numpy as np
import pytest

from hypokinetic.phase_space import build_grid
from hypokinetic.solver import Scenario


@pytest.fixture(scope="session")
def grid():
    return build_grid(16, 2 * np.pi, 8)


@pytest.fixture(scope="session")
def small_scenario():
    return Scenario(nx=16, nv=8, t_end=2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
