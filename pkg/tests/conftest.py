import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dockverify.controllers import load_shipped_controller
from dockverify.dynamics import DynParams, affine_transition

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def params() -> DynParams:
    return DynParams()


@pytest.fixture(scope="session")
def shipped():
    return load_shipped_controller()


@pytest.fixture(scope="session")
def transition(params):
    return affine_transition(params)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
