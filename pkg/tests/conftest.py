"""Shared fixtures and the acceptance-criterion summary.

Acceptance tests carry ``@pytest.mark.criterion(n, "title")``. After the
run, one PASS/FAIL line per criterion is printed; a criterion with several
tests passes only if all of them do. Tests can attach a short measurement
through ``record_property("detail", ...)``.
"""

from collections import OrderedDict

import numpy as np
import pytest

import neutrabench  # noqa: F401  (enables float64 before any jax use)
from neutrabench.models import reference_model

_RESULTS: "OrderedDict[int, dict]" = OrderedDict()
_NODE_CRITERION: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test checks")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _NODE_CRITERION[item.nodeid] = number
            _RESULTS.setdefault(number, {"title": title, "outcomes": [], "details": []})


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number = _NODE_CRITERION.get(report.nodeid)
    if number is None:
        return
    entry = _RESULTS[number]
    ok = report.passed or (report.skipped and report.when == "call")
    entry["outcomes"].append(ok)
    for key, value in report.user_properties:
        if key == "detail":
            entry["details"].append(str(value))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, entry in sorted(_RESULTS.items()):
        if not entry["outcomes"]:
            status = "NOT RUN"
        else:
            status = "PASS" if all(entry["outcomes"]) else "FAIL"
        line = f"{status} criterion {number}: {entry['title']}"
        if entry["details"]:
            line += " | " + "; ".join(entry["details"])
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ref_model():
    return reference_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
