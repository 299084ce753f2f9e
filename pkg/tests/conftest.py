from __future__ import annotations

import re

from hypothesis import HealthCheck, settings

# numba-backed kernels make the first example slow (compilation, cache load)
settings.register_profile(
    "condexit", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("condexit")


_CRITERIA: dict[int, list[str]] = {}


def pytest_runtest_logreport(report):
    """Remember the outcome of every test belonging to an acceptance criterion."""
    m = re.match(r"test_criterion_(\d+)_", report.nodeid.rsplit("::", 1)[-1])
    if m is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if hasattr(report, "wasxfail"):
            outcome = "FAIL (known, marked xfail)" if report.skipped else "PASS (unexpectedly)"
        else:
            outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIPPED"}[report.outcome]
        _CRITERIA.setdefault(int(m.group(1)), []).append(outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        outcomes = _CRITERIA[k]
        failed = [o for o in outcomes if o != "PASS"]
        terminalreporter.write_line(f"criterion {k}: {failed[0] if failed else 'PASS'}")
