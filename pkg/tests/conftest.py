"""Shared pytest plumbing.

Prints a one-line PASS/FAIL verdict per acceptance criterion at the end of
the run (test output itself is captured by pytest, so the summary hook is
the reliable place to emit the scoreboard).
"""

import re

_ACCEPTANCE_RESULTS = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::.*test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2).replace("_", " "))
    if report.when == "call":
        _ACCEPTANCE_RESULTS[key] = report.outcome
    elif report.when == "setup" and report.outcome != "passed":
        _ACCEPTANCE_RESULTS[key] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for (num, label), outcome in sorted(_ACCEPTANCE_RESULTS.items()):
        verdict = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(
            outcome, outcome.upper())
        terminalreporter.write_line(f"criterion {num:2d} [{label}]: {verdict}")
