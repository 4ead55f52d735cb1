import numpy as np
import pytest

from finsler_lab import Chart, RandersMetric, RiemannianMetric, StereographicSphere, euclidean

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def plane():
    return Chart.box(2, -5.0, 5.0)


@pytest.fixture(scope="session")
def flat(plane):
    return euclidean(plane)


@pytest.fixture(scope="session")
def randers(plane):
    return RandersMetric(plane, np.eye(2), [0.5, 0.0])


@pytest.fixture(scope="session")
def sphere():
    return RiemannianMetric(Chart.box(2, -3.0, 3.0), StereographicSphere(1.0))


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    return pytestconfig.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
