import os

import pytest
from hypothesis import HealthCheck, settings

from alipgait.alip import RobotParams
from alipgait.trajectory import resolve_library, synthesize_nominal

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SCENARIOS = os.path.join(os.path.dirname(os.path.dirname(__file__)), "scenarios")


@pytest.fixture(scope="session")
def params():
    return RobotParams()


@pytest.fixture(scope="session")
def lib():
    return resolve_library("default")


@pytest.fixture(scope="session")
def flat(lib):
    return lib[0]


@pytest.fixture(scope="session")
def marching(params):
    return resolve_library("marching")[0]


@pytest.fixture(scope="session")
def tables(lib, params):
    from alipgait.sim import lookup_tables
    return lookup_tables(lib, params)


@pytest.fixture(scope="session")
def scenario_dir():
    return SCENARIOS


ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one criterion outcome: acceptance(n, ok, detail)."""
    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
