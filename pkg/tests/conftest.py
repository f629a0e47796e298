"""Prints one PASS/FAIL line per acceptance criterion after the run."""

import pytest

_acceptance: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Returns a recorder for the test's one-line measured summary."""

    def _record(detail: str) -> None:
        _acceptance[request.node.name] = (True, detail)

    return _record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.get_closest_marker("acceptance"):
        if not rep.passed:
            detail = _acceptance.get(item.name, (False, ""))[1] or "assertion failed"
            _acceptance[item.name] = (False, detail)
        elif item.name not in _acceptance:
            _acceptance[item.name] = (True, "")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        ok, detail = _acceptance[name]
        tag = "PASS" if ok else "FAIL"
        line = f"{tag} {name}"
        if detail:
            line += f": {detail}"
        terminalreporter.write_line(line)
