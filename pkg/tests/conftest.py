import numpy as np
import pytest

from htsched.markov_env import build_generator
from htsched.mimo import ChannelSet, mac_region_scalar
from htsched.utility import linear_log


@pytest.fixture(scope="session")
def sym_mac():
    """Bundled symmetric 2-user MAC: equal gains per state, unit powers."""
    return mac_region_scalar(ChannelSet.scalar([[1.0, 1.0], [0.7, 0.7]], powers=[1.0, 1.0]))


@pytest.fixture(scope="session")
def two_state():
    return build_generator([0.5, 0.5], [[0, 1], [1, 0]])


@pytest.fixture(scope="session")
def linlog2():
    return linear_log([1.0, 1.0])


# ---------------------------------------------------------------- acceptance report

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and short title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "setup" and not rep.failed:
        return
    _CRITERIA[n] = (title, rep.passed, detail, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail, secs = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail} ({secs:.1f}s)")
