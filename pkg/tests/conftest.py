import numpy as np
import pytest

from olorawan.constants import load_constants


@pytest.fixture(scope="session")
def registry():
    return load_constants()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240901)
