import pytest

_LINES = []


@pytest.fixture
def criterion():
    """record(number, ok, detail) stores one summary line and returns ok."""
    def record(number, ok, detail=""):
        _LINES.append((number, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")

    def order(line):
        tag = str(line[0])
        digits = "".join(ch for ch in tag if ch.isdigit())
        return int(digits), tag

    for number, ok, detail in sorted(_LINES, key=order):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
