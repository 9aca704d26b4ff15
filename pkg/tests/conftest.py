import pytest

# filled by tests/test_acceptance.py: (criterion id, title, passed, detail)
ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record a criterion outcome; use as ``criterion(id, title, checks)``.

    ``checks`` maps a description to a boolean. The test fails when any
    check fails, after the outcome has been recorded for the summary.
    """

    def record(cid, title, checks, detail=""):
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        ACCEPTANCE.append((cid, title, ok, detail if ok else f"{detail}; failed: {failed}"))
        assert ok, f"criterion {cid} failed: {failed} ({detail})"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {cid} {title}: {detail}")
