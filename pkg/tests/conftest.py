import pytest

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    crit = _criteria.get(report.nodeid)
    if crit is None:
        return
    if report.when == "call" or report.failed:
        crit["outcome"] = "PASS" if report.passed and crit.get("outcome") != "FAIL" else "FAIL"


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _criteria[item.nodeid] = {"number": m.args[0], "text": m.args[1]}


def pytest_terminal_summary(terminalreporter):
    ran = [c for c in _criteria.values() if "outcome" in c]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ran, key=lambda c: c["number"]):
        terminalreporter.write_line(f"criterion {c['number']:>2} {c['outcome']}: {c['text']}")
