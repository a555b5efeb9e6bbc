"""Collects the one-line acceptance verdicts and repeats them at the end of the run."""
import pytest

_LINES: list[str] = []


@pytest.fixture
def verdict():
    def record(criterion: int, ok: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {criterion:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        _LINES.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
