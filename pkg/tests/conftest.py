import pytest

_LINES = []


@pytest.fixture(scope="session")
def report():
    """``report(n, name, ok, detail)`` records one acceptance verdict line."""
    def record(n, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {name}" + (f" ({detail})" if detail else "")
        _LINES.append((n, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
