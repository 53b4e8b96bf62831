import numpy as np
import pytest

from ecspde.spectral import FourierGrid


@pytest.fixture(scope="session")
def grid32():
    return FourierGrid(32)


@pytest.fixture(scope="session")
def grid16():
    return FourierGrid(16)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
