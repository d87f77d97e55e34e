import numpy as np
import pytest

from ccama.linops import OperatorBundle
from ccama.problem import gen_msd, random_instance


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def small_instance(rng):
    """n = 4 random Hurwitz instance, full mask, with its white-noise ground truth."""
    instance, X = random_instance(4, rng, gamma=1.0, mask="full")
    return instance, X


@pytest.fixture
def masked_instance(rng):
    instance, X = random_instance(5, rng, gamma=1.0, mask="random", inputs=2)
    return instance, X


@pytest.fixture
def small_bundle(small_instance):
    return OperatorBundle.from_instance(small_instance[0])


@pytest.fixture
def msd2():
    return gen_msd(2)


@pytest.fixture
def msd3():
    return gen_msd(3, gamma=1.0)
