"""Shared pytest plumbing: surface acceptance verdicts in the summary.

Per-criterion PASS/FAIL lines are collected by tests/test_acceptance.py
and echoed after the run, where pytest's output capture cannot swallow
them.
"""

ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)
