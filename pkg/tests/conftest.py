import numpy as np
import pytest

from dmzfilter.hermite import build_basis
from dmzfilter.model import builtin_model

# Filled by tests/test_acceptance.py, printed at the end of the session.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def cubic():
    return builtin_model("cubic")


@pytest.fixture(scope="session")
def linear():
    return builtin_model("linear_gaussian")


@pytest.fixture(scope="session")
def tv_model():
    return builtin_model("almost_linear_tv")


@pytest.fixture(scope="session")
def basis40():
    return build_basis(1.0, 0.0, 40)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
