import numpy as np
import pytest
from hypothesis import settings

from boundary_rl.dynamics import make_benchmark

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def circuit():
    return make_benchmark("rl_circuit")


@pytest.fixture(scope="session")
def cubic():
    return make_benchmark("cubic")


@pytest.fixture(scope="session")
def manipulator():
    return make_benchmark("manipulator")


def zero_policy(m=1):
    return lambda x: np.zeros(m)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
