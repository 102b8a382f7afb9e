import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, title, passed, detail)`` for the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        mark = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES[number] = f"{mark}  AC{number:<2d} {title}" + (f"  ({detail})" if detail else "")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
