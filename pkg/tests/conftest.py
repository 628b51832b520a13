import pytest

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: criterion(number, passed, detail)."""

    def record(number: int, name: str, passed: bool, detail: str):
        request.config.stash[_ACCEPTANCE][number] = (name, bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        name, passed, detail = lines[number]
        terminalreporter.write_line(f"C{number:02d} {'PASS' if passed else 'FAIL'}  {name}: {detail}")
