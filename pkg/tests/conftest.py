import numpy as np
import pytest

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    crit = getattr(report, "_criterion", None)
    if crit is not None:
        _criteria.setdefault(crit, []).append(report.passed)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result()._criterion = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (n, title), results in sorted(_criteria.items()):
        status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {n:>2}: {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
