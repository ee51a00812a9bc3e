import pytest

_outcomes = {}
_details = {}


def _criterion(item):
    mark = item.get_closest_marker("criterion")
    return None if mark is None else mark.args[0]


@pytest.fixture
def report(request):
    """Attach a one-line measurement summary to the test's criterion."""
    n = _criterion(request.node)

    def record(text):
        _details.setdefault(n, []).append(text)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    n = _criterion(item)
    if n is None:
        return
    failed = rep.failed and (rep.when == "call" or rep.when == "setup")
    if rep.when == "call" or failed:
        _outcomes[n] = _outcomes.get(n, True) and not failed


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        status = "PASS" if _outcomes[n] else "FAIL"
        detail = "; ".join(_details.get(n, []))
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}".rstrip())
