import numpy as np
import pytest

ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def small_data():
    return np.random.default_rng(123).normal(3.0, 3.0, size=200)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
