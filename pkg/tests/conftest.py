import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tagnav.geometry import default_intrinsics, wall_marker_map

settings.register_profile(
    "repo", deadline=None, derandomize=True, print_blob=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def wall():
    return wall_marker_map()


@pytest.fixture(scope="session")
def intr():
    return default_intrinsics()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
