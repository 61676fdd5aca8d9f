"""Shared fixtures and the acceptance summary hook."""

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# ---------------------------------------------------------------------------
# one pass/fail line per acceptance criterion

_CRITERIA = {}
_NOTES = []


@pytest.fixture
def acceptance_note():
    """Append a line of text to the acceptance summary."""
    return _NOTES.append


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid or "test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        number = int(name.split("_")[2])
        label = " ".join(name.split("_")[3:])
        status = "PASS" if _CRITERIA[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} ({label}): {status}")
    for note in _NOTES:
        terminalreporter.write_line(note)
