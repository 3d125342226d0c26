import pytest

# one line per acceptance criterion, printed in the terminal summary so the
# verdicts show up even when output capture is on
CRITERIA: dict[int, str] = {}


def record(n: int, passed: bool, detail: str) -> bool:
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[n] = line
    print(line)
    return passed


@pytest.fixture
def criterion():
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
