import pytest

_KEY = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one acceptance verdict; all of them are echoed at the end of the run."""
    lines = request.config.stash.setdefault(_KEY, [])

    def emit(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
        print(line)
        lines.append(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
