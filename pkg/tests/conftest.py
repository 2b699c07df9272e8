import pytest

from icc.model import ModelConfig, init_weights
from icc.samplers import make_linear_schedule


@pytest.fixture(scope="session")
def small_cfg():
    return ModelConfig(depth=2, hidden=32, heads=4, tokens=16)


@pytest.fixture(scope="session")
def small_weights(small_cfg):
    return init_weights(small_cfg, 7)


@pytest.fixture(scope="session")
def sched50():
    return make_linear_schedule(50)
