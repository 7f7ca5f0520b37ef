import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> list of (test id, outcome, detail)
_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "setup" and rep.skipped:
        status = "skip"
    elif rep.when != "call":
        return
    elif hasattr(rep, "wasxfail"):
        status = "xfail" if rep.skipped else "xpass"
    else:
        status = rep.outcome
    detail = getattr(item, "_acceptance_detail", "")
    _CRITERIA.setdefault(mark.args[0], []).append((item.name, status, detail))


@pytest.fixture
def detail(request):
    """Attach a short measured-value summary to the acceptance line."""

    def record(text):
        request.node._acceptance_detail = text
        print(f"[criterion {request.node.get_closest_marker('criterion').args[0]}] {request.node.name}: {text}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        entries = _CRITERIA[num]
        required = [e for e in entries if e[1] not in ("xfail", "xpass")]
        ok = bool(required) and all(e[1] == "passed" for e in required)
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}")
        for name, status, text in entries:
            suffix = f" ({text})" if text else ""
            terminalreporter.write_line(f"    {status:7s} {name}{suffix}")
