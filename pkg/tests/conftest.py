import math

import numpy as np
import pytest

from hessmh.catalog import get_model, standard_normal_log_prior
from hessmh.core_measures import SmoothFunction, TargetFamily

# Independent oracle values used across modules.
# Acceptance rate of N(x, I) proposals for N(0, 1): (2/pi) arctan(2/s) at s = 1.
HRW_ABAR_D1_S1 = 2.0 / math.pi * math.atan(2.0)


def quadratic_target(center=0.0, d=1, name="quad"):
    """pi_0 = N(0, I), U = |x - center|^2 / 2."""
    c = np.full(d, float(center))
    pot = SmoothFunction(lambda x: 0.5 * float((x - c) @ (x - c)), lambda x: x - c, lambda x: np.eye(d))
    return TargetFamily(pot, standard_normal_log_prior(d), d, name=name)


@pytest.fixture
def ridge():
    return get_model("gauss_ridge").target()


@pytest.fixture
def cubic():
    return get_model("cubic_1d").target()


@pytest.fixture
def gauss1():
    return get_model("gauss_1d").target()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
