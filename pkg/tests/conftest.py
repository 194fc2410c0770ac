import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record ``(number, ok, detail)``; the line is printed now and again in the terminal summary."""

    def record(number, ok, detail):
        line = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
