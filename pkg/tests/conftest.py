import pytest

ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_report():
    """Collects one summary line per acceptance criterion."""
    def record(n, line):
        ACCEPTANCE_LINES[n] = line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
