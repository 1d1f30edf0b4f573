"""Print one PASS/FAIL line per acceptance criterion at the end of the run."""
from collections import defaultdict

import pytest

_OUTCOMES: dict[int, list] = defaultdict(list)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        details = [v for k, v in report.user_properties if k == "detail"]
        _OUTCOMES[marker.args[0]].append((item.name, report.outcome, details))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_OUTCOMES):
        runs = _OUTCOMES[criterion]
        status = "PASS" if all(outcome == "passed" for _, outcome, _ in runs) else "FAIL"
        details = "; ".join(d for _, _, ds in runs for d in ds)
        names = ", ".join(name for name, _, _ in runs)
        terminalreporter.write_line(f"criterion {criterion}: {status}  [{names}]  {details}".rstrip())
