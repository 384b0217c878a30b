import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bcphs.discretize import nodal_state
from bcphs.models import preset

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Lines collected by the acceptance module, echoed at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def tip_load_profile(z):
    """Beam state (0, zeta - 0.9): equilibrium under a tip moment and shear force."""
    z = np.asarray(z, dtype=float)
    return np.stack([0 * z, z - 0.9], axis=-1)


def tip_load_state(sys):
    return nodal_state(sys, sys.spec, tip_load_profile)


@pytest.fixture(scope="session")
def beam2m():
    return preset("beam-2m")


@pytest.fixture(scope="session")
def beam3m():
    return preset("beam-3m")


@pytest.fixture(scope="session")
def wave():
    return preset("wave")
