import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion."""

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
