from __future__ import annotations

import pytest

# (criterion number, passed, detail) appended by the acceptance module
ACCEPTANCE_LINES: list = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict, then assert it."""
    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append((number, bool(ok), detail))
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}: {detail}")
