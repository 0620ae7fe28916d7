import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the one-line verdict for an acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        _LINES[number] = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_LINES):
        terminalreporter.write_line(_LINES[number])
