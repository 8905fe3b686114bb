import numpy as np
import pytest

from smallnoise.models import get_model


@pytest.fixture(scope="session")
def ou():
    return get_model("ou")


@pytest.fixture(scope="session")
def cir():
    return get_model("cir")


@pytest.fixture(scope="session")
def two_factor():
    return get_model("two_factor")


@pytest.fixture(scope="session")
def sir():
    return get_model("sir")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def log(line):
        lines.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
