import pytest

_outcomes = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_outcomes] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    results = item.config.stash[_outcomes]
    name = marker.args[0]
    # a criterion holds only if every test carrying it passed
    if report.failed or (report.when == "call" and report.skipped):
        results[name] = False
    elif report.when == "call":
        results.setdefault(name, True)


def pytest_terminal_summary(terminalreporter):
    results = terminalreporter.config.stash[_outcomes]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in results.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
