import os

import pytest

from hlstc.bench import CACHE_ENV
from hlstc.certify import CertGrid, cached_sweep, default_eps_grid, robot_arm_lyapunov
from hlstc.robot_arm import RobotArm
from hlstc.stc import StcConfig

DELTA = 0.999
EPS_REF = 0.01


@pytest.fixture(scope="session")
def arm():
    return RobotArm()


@pytest.fixture(scope="session")
def abstraction(arm):
    return arm.polytopic()


@pytest.fixture(scope="session")
def lyap(abstraction):
    return robot_arm_lyapunov(abstraction)


@pytest.fixture(scope="session")
def sets(request, lyap, abstraction):
    """The default 23-point sweep on the 50-samples-per-axis box, cached across sessions."""
    cache = request.config.cache.mkdir("hlstc-param-sets")
    return cached_sweep(cache, lyap, abstraction, default_eps_grid(), CertGrid(), DELTA)


@pytest.fixture(scope="session", autouse=True)
def sweep_cache_env(request):
    """Point the CLI and benchmark at the same sweep cache the fixtures use."""
    previous = os.environ.get(CACHE_ENV)
    os.environ[CACHE_ENV] = str(request.config.cache.mkdir("hlstc-param-sets"))
    yield
    if previous is None:
        os.environ.pop(CACHE_ENV, None)
    else:
        os.environ[CACHE_ENV] = previous


@pytest.fixture(scope="session")
def stc_cfg(sets):
    return StcConfig(eps_ref=EPS_REF, delta=DELTA, v_max=1e6, m=16, sets=tuple(sets))


_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
