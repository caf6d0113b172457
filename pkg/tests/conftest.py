"""Shared pytest plumbing.

The acceptance tests in test_acceptance.py report one PASS/FAIL line per
criterion. Those lines are collected here and replayed in a terminal
section after the run, so they are visible even without -s.
"""

import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Returns report(name, ok, detail): records a criterion outcome and asserts it."""

    def report(name: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
