import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record a one-line PASS/FAIL verdict for an acceptance criterion."""
    lines = request.config.stash.setdefault(_LINES, [])

    def emit(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
