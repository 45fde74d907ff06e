import re

_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    m = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if m:
        details = [v for k, v in report.user_properties if k == "detail"]
        _ACCEPTANCE.append((int(m.group(1)), m.group(2), report.outcome, report.duration, details))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, name, outcome, dur, details in sorted(_ACCEPTANCE):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n} [{status}] {name.replace('_', ' ')} ({dur:.1f} s)")
        for d in details:
            terminalreporter.write_line(f"    {d}")
