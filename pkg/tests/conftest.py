import pytest

_CRITERIA = {}


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion."""

    def record(key, passed, detail):
        _CRITERIA[key] = (bool(passed), detail)
        print(f"criterion {key}: {'PASS' if passed else 'FAIL'} | {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int(str(k).rstrip("abcdefgh")), str(k))):
        passed, detail = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'} | {detail}")
