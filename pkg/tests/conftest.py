import pytest

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for the summary printed at the end of the session."""
    lines = request.config.stash.setdefault(_RESULTS, [])

    def record(number: int, name: str, passed: bool, detail: str):
        passed = bool(passed)
        lines.append((number, f"criterion {number} {name}: {'PASS' if passed else 'FAIL'}  {detail}"))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
