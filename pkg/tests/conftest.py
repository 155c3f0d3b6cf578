import pytest

_RESULTS = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title = marker.args
    if call.excinfo is None:
        if call.when == "call":
            measured = ", ".join(f"{k} {v}" for k, v in item.user_properties)
            _RESULTS[number] = ("PASS", title, measured)
    elif call.excinfo.errisinstance(pytest.skip.Exception):
        _RESULTS[number] = ("SKIP", title, str(call.excinfo.value))
    else:
        _RESULTS[number] = ("FAIL", title, call.excinfo.exconly().splitlines()[0][:160])


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, title, detail = _RESULTS[number]
        line = f"{status} criterion {number}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
