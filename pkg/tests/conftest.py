import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")
    config.addinivalue_line("markers", "slow: long-running test")


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    key = report.nodeid
    entry = _criteria.setdefault(key, {"outcome": "passed", "duration": 0.0})
    entry["duration"] += report.duration
    if report.failed:
        entry["outcome"] = "failed"
    elif report.skipped and entry["outcome"] == "passed":
        entry["outcome"] = "skipped"


@pytest.hookimpl(tryfirst=True)
def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _titles[item.nodeid] = m.args


_titles = {}


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    rows = []
    for nodeid, res in _criteria.items():
        num, title = _titles.get(nodeid, (99, nodeid))
        rows.append((num, title, res))
    for num, title, res in sorted(rows, key=lambda r: r[0]):
        word = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[res["outcome"]]
        tr.write_line(f"criterion {num}: {word}  {title}  ({res['duration']:.2f} s)")
