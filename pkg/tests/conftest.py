import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")
    config._criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and call.excinfo is not None:
        reason = f"{call.excinfo.typename}: {str(call.excinfo.value).splitlines()[0] if str(call.excinfo.value) else ''}"
        detail = f"{detail}; {reason}" if detail else reason
    item.config._criteria.append((number, "PASS" if rep.passed else "FAIL", title, detail))


def pytest_terminal_summary(terminalreporter, config):
    rows = sorted(config._criteria)
    if not rows:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, status, title, detail in rows:
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}: {detail}")
