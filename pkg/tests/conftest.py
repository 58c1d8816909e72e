import pytest

ACCEPTANCE_LINES: dict[int, list[str]] = {}


@pytest.fixture
def verdict():
    """Record one acceptance line; printed in the terminal summary."""
    def record(n: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.setdefault(n, []).append(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance")
    for n in sorted(ACCEPTANCE_LINES):
        for line in ACCEPTANCE_LINES[n]:
            terminalreporter.write_line(line)
