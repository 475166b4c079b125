"""Prints one PASS/FAIL line per acceptance criterion at the end of a run."""
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion this test decides")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        _outcomes[item.nodeid] = (name, status, report.duration)
    elif report.when == "teardown" and report.failed and item.nodeid in _outcomes:
        prev = _outcomes[item.nodeid]
        _outcomes[item.nodeid] = (prev[0], "FAIL", prev[2])


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, duration in _outcomes.values():
        terminalreporter.write_line(f"{status}  {name}  ({duration:.1f} s)")
