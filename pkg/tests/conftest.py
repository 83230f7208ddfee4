import pytest

_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion; the summary prints them in order."""

    def report(number, ok, detail):
        _ACCEPTANCE[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
