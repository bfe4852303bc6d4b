import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from resnetkit import engine

settings.register_profile(
    "ci",
    max_examples=25,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

engine.configure_allocator()
# every forward op asserts finite outputs while the suite runs
engine.set_debug_checks(True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240)
