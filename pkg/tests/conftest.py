"""Collects the acceptance verdicts and prints them after the run."""
import pytest

VERDICTS: list[str] = []


@pytest.fixture()
def verdict():
    def record(number: int, name: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} [{name}]: {'PASS' if passed else 'FAIL'} - {detail}"
        VERDICTS.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
