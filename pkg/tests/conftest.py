import numpy as np
import pytest

from octupole import TrapConfig


@pytest.fixture
def cfg():
    return TrapConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
