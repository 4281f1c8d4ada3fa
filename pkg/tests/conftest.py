import numpy as np
import pytest

from agefl.markov import cyclic_chain
from agefl.model import make_clients

VALUES = [20.0, 50.0, 100.0, 200.0]
HOUSEHOLD_Q = (0.1, 0.3, 0.6)
HOUSEHOLD_DIST = (
    [0.8, 0.2, 0.0, 0.0],
    [0.0, 0.1, 0.5, 0.4],
    [0.2, 0.3, 0.5, 0.0],
)


def household_chains(uniform=False):
    return [
        cyclic_chain(4, q, VALUES, None if uniform else dist)
        for q, dist in zip(HOUSEHOLD_Q, HOUSEHOLD_DIST)
    ]


@pytest.fixture
def chains():
    return household_chains()


@pytest.fixture
def uniform_chains():
    return household_chains(uniform=True)


@pytest.fixture(scope="module")
def clients():
    return make_clients(household_chains(), [100, 100, 100])


def brute_matrix_power(P, t):
    out = np.eye(P.shape[0])
    for _ in range(t):
        out = np.array([[sum(out[i, k] * P[k, j] for k in range(P.shape[0])) for j in range(P.shape[0])]
                        for i in range(P.shape[0])])
    return out


# -- acceptance summary ------------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _CRITERIA[mark.args[0]] = (rep.passed, mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, title = _CRITERIA[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n:>2}: {title}")
