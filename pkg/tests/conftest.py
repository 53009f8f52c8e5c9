import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> [title, all parts passed so far, measured notes]
_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): part of numbered acceptance criterion n")


@pytest.fixture
def measured(request):
    """Call with a string to attach a measured value to the acceptance summary."""
    return lambda text: request.node.user_properties.append(("measured", text))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, [title, True, []])
    if report.failed or (report.when == "call" and report.skipped):
        entry[1] = False
    if report.when == "call":
        entry[2].extend(v for k, v in item.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok, notes = _criteria[n]
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title}"
        if notes:
            line += " [" + "; ".join(notes) + "]"
        terminalreporter.write_line(line)
