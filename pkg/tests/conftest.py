import numpy as np
import pytest

from gqnet import GroupedDesign


def brute_check_loss(u, tau):
    # written from the piecewise definition, independent of the library
    return tau * u if u >= 0 else (tau - 1.0) * u


def random_design(rng, n, g, p):
    return GroupedDesign(rng.standard_normal((n, g * p)), g, p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
