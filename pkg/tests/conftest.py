import numpy as np
import pytest
from hypothesis import settings

from magflow import systems

settings.register_profile("magflow", deadline=None, max_examples=25, derandomize=True,
                          print_blob=True)
settings.load_profile("magflow")

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """``record(n, ok, detail)``: one pass/fail line per acceptance criterion."""
    log = request.config.stash[_ACCEPTANCE]

    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        log.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def random_systems():
    r = np.random.default_rng(7)
    return [systems.random_torus(r) for _ in range(3)]


@pytest.fixture(scope="session")
def hyper05():
    return systems.hyperbolic(0.5)
