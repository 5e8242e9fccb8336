import sys

import numpy as np
import pytest

from gibbs_causal.sim import DgpSpec, dgp_example1, dgp_example2


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def example1_data():
    return dgp_example1(DgpSpec("one", 1000), np.random.default_rng(11))


@pytest.fixture(scope="session")
def example2_data():
    return dgp_example2(DgpSpec("two", 1000), np.random.default_rng(12))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
