import pytest

from asg1 import samples as S
from asg1.reparam_optimizer import reparameterize


@pytest.fixture(scope="session")
def generic():
    return S.generic_three_patch()


@pytest.fixture(scope="session")
def generic_reparam_k1(generic):
    return reparameterize(generic, 3, 1, 1)


@pytest.fixture(scope="session")
def generic_reparam_k3(generic):
    return reparameterize(generic, 3, 1, 3)


_CRITERIA: dict = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    n = marker.args[0]
    ok = call.excinfo is None
    _CRITERIA[n] = _CRITERIA.get(n, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if _CRITERIA[n] else 'FAIL'}")
