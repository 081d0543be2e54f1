import pytest

_RESULTS: dict = {}


@pytest.fixture
def criterion():
    """``criterion(n, name, ok, detail)`` prints one line, records it for the summary, and asserts."""

    def record(n: int, name: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {n:>2d} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _RESULTS[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_RESULTS):
            terminalreporter.write_line(_RESULTS[n])
