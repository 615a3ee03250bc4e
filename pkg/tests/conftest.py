import numpy as np
import pytest

from fcrbess.cell import CellParams, OcvCurve


@pytest.fixture
def linear_ocv():
    return OcvCurve(np.array([0.0, 1.0]), np.array([3.0, 4.2]))


@pytest.fixture
def cell():
    return CellParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
