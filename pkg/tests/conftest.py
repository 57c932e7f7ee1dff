from __future__ import annotations

import pytest

_RESULTS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_logreport(report):
    mark = getattr(report, "criterion", None)
    if mark is None:
        return
    n, title = mark
    prev = _RESULTS.get(n, (title, "PASS"))
    if report.failed or (report.when == "call" and report.skipped):
        _RESULTS[n] = (title, "FAIL" if report.failed else "SKIP")
    elif report.when == "call" and prev[1] == "PASS":
        _RESULTS[n] = (title, "PASS")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, status = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")
