import numpy as np
import pytest

from srvrpg.mdp import default_oracle_mdp
from srvrpg.policy import SoftmaxPolicy


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def oracle_mdp():
    return default_oracle_mdp()


@pytest.fixture
def softmax():
    return SoftmaxPolicy(2, 2)


class ZeroNormal:
    """Stand-in generator whose normal draws are all zero."""

    def standard_normal(self, size=None):
        return np.zeros(size if size is not None else ())


@pytest.fixture
def zero_rng():
    return ZeroNormal()
