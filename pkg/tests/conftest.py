from __future__ import annotations

import re

import pytest

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.fixture
def detail(record_property):
    """Attach a one-line result summary to the acceptance printout."""
    def _rec(text: str):
        record_property("detail", text)
    return _rec


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        det = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE[n] = (report.outcome, det, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        outcome, det, dur = _ACCEPTANCE[n]
        tag = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome.upper())
        tr.write_line(f"criterion {n:2d}: {tag}  [{dur:.1f} s]  {det}")
