import pytest

VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line; the caller asserts afterwards."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
