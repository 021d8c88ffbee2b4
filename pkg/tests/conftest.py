"""Per-criterion PASS/FAIL lines for the acceptance suite.

Acceptance tests carry ``@pytest.mark.criterion(n, title)`` and may attach a
measured summary through ``record_property("detail", ...)``.
"""

import pytest

_outcomes: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(item.user_properties).get("detail", "")
        _outcomes[number] = (title, report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        title, outcome, detail = _outcomes[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"[{status}] criterion {number:>2}: {title}"
        terminalreporter.write_line(line + (f" | {detail}" if detail else ""))
