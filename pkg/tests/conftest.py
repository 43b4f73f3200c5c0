import numpy as np
import pytest

from cornerspde.geometry import l_shape
from cornerspde.verify import CornerProblem


@pytest.fixture(scope="session")
def lshape():
    return l_shape()


@pytest.fixture(scope="session")
def coarse(lshape):
    """L-shape at h = 0.04 with 60 modes, for fast structural checks."""
    return CornerProblem.build(lshape, 0.04, 60)


@pytest.fixture(scope="session")
def default_problem(lshape):
    """L-shape at the default resolution h = 0.02 with 100 modes."""
    return CornerProblem.build(lshape, 0.02, 100)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
