import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from reach_codesign.aero import AircraftParams, default_table  # noqa: E402
from reach_codesign.flight import linearize, trim  # noqa: E402
from reach_codesign.lti import LtiSystem  # noqa: E402


@pytest.fixture(scope="session")
def table():
    return default_table()


@pytest.fixture(scope="session")
def params():
    return AircraftParams()


@pytest.fixture(scope="session")
def default_trim(table, params):
    return trim((5.0, 12.0), table, params, 200.0, 0.0)


@pytest.fixture(scope="session")
def default_model(table, params, default_trim):
    return linearize((5.0, 12.0), table, params, default_trim)


def random_stable_system(rng, n=4, m=2):
    a = rng.standard_normal((n, n))
    # shift the spectrum into the left half plane
    a -= (np.max(np.linalg.eigvals(a).real) + 0.5) * np.eye(n)
    return LtiSystem(a, rng.standard_normal((n, m)))
