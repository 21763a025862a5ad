import pytest

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
CRITERIA = 12
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Store one acceptance outcome and assert on it."""

    def _record(number: int, passed: bool, detail: str):
        ACCEPTANCE[number] = (bool(passed), detail)
        assert passed, f"criterion {number}: {detail}"

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, CRITERIA + 1):
        passed, detail = ACCEPTANCE.get(number, (False, "no result recorded (test errored or was deselected)"))
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {detail}")
