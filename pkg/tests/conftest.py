import pytest

_LINES: list[str] = []


@pytest.fixture
def record():
    """Log one verdict line; lines are echoed again in the terminal summary."""

    def _record(label: str, passed: bool | None, detail: str) -> bool | None:
        verdict = "INFO" if passed is None else ("PASS" if passed else "FAIL")
        line = f"{verdict} {label}: {detail}"
        _LINES.append(line)
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
