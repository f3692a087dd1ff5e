import os

import pytest
from hypothesis import HealthCheck, settings

from mfaboed.io import load_fixture

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def toy():
    return load_fixture("toy")


@pytest.fixture(scope="session")
def steel():
    return load_fixture("steel")
