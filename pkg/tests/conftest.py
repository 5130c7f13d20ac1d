import numpy as np
import pytest

from pxqlap.grid import Domain, build_grid

COOP = dict(alpha1=-0.05, beta1=0.5, alpha2=0.5, beta2=-0.05)
COMP = dict(alpha1=-0.2, beta1=-0.1, alpha2=-0.1, beta2=-0.2)
P_VAR = "2.5 + 0.2*sin(pi*x)"


@pytest.fixture
def unit():
    return Domain.interval(0.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def interval_grid(n):
    return build_grid(Domain.interval(0.0, 1.0), n)


ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
