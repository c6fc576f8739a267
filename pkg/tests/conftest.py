import pytest

_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        verdict = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        _VERDICTS[number] = (verdict, title)
        print(f"\nCRITERION {number}: {verdict}  {title}")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        verdict, title = _VERDICTS[number]
        terminalreporter.write_line(f"{verdict}  criterion {number:2d}  {title}")
