import pytest

ACCEPTANCE_LINES = {}


@pytest.fixture
def report():
    """Record one acceptance line per criterion; printed in the terminal summary."""

    def _report(number: int, title: str, ok: bool, detail: str):
        ACCEPTANCE_LINES[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        print(ACCEPTANCE_LINES[number])
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
