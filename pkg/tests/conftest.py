import numpy as np
import pytest
from hypothesis import settings

from rwrelab import get_fixture

settings.register_profile("det", derandomize=True, max_examples=40)
settings.load_profile("det")


@pytest.fixture(scope="session")
def d1_twopoint():
    return get_fixture("d1-twopoint")


@pytest.fixture(scope="session")
def skewed_1d():
    return get_fixture("skewed-1d")


@pytest.fixture(scope="session")
def speedup_s2():
    return get_fixture("speedup-s2")


@pytest.fixture(scope="session")
def sym_2d():
    return get_fixture("sym-2d")


@pytest.fixture(scope="session")
def drifted_2d():
    return get_fixture("drifted-2d")


@pytest.fixture
def rng():
    return np.random.default_rng(20240808)
