import pytest

_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record a criterion verdict, then fail the test if it did not pass."""
    store = request.config.stash.setdefault(_VERDICTS, {})

    def record(number, title, ok, detail):
        store[number] = (title, bool(ok), detail)
        assert ok, f"criterion {number} ({title}): {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_VERDICTS, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        title, ok, detail = store[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:>2}. {title}: {detail}")
