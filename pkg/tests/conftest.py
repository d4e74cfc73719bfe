import re

import pytest

_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for an acceptance criterion.

    Call ``criterion(label, ok, detail)``; the verdict is asserted and later
    printed in the terminal summary.
    """

    def record(label, ok, detail=""):
        _CRITERIA[label] = ("PASS" if ok else "FAIL", detail)
        assert ok, f"{label}: {detail}"

    return record


def pytest_runtest_logreport(report):
    # criteria whose test was skipped still get a line
    if report.when == "setup" and report.skipped and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        match = re.match(r"test_c(\d+)", name)
        name = f"criterion {match.group(1)} ({name})" if match else name
        reason = report.longrepr[-1] if isinstance(report.longrepr, tuple) else ""
        _CRITERIA.setdefault(name, ("SKIP", reason))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA):
        verdict, detail = _CRITERIA[label]
        terminalreporter.write_line(f"{verdict} {label}: {detail}")
