import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_addoption(parser):
    parser.addoption("--heavy", action="store_true", default=False,
                     help="also run the stretch-scale checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "heavy: stretch-scale check, needs --heavy")
    config.addinivalue_line("markers", "criterion(k, title): acceptance criterion k")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--heavy"):
        return
    skip = pytest.mark.skip(reason="stretch-scale check; run with --heavy")
    for item in items:
        if "heavy" in item.keywords:
            item.add_marker(skip)


# --- per-criterion pass/fail lines for the acceptance suite --------------------------------------

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or rep.failed or (rep.when == "setup" and rep.skipped):
        entry = _CRITERIA.setdefault(mark.args[0], {"title": mark.args[1], "runs": []})
        notes = [f"{k}={v}" for k, v in item.user_properties]
        if rep.skipped:
            notes.append(str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else "skipped")
        entry["runs"].append((item.name, rep.outcome, notes))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        entry = _CRITERIA[k]
        outcomes = [o for _, o, _ in entry["runs"]]
        if "failed" in outcomes:
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        notes = "; ".join(n for _, _, ns in entry["runs"] for n in ns)
        terminalreporter.write_line(f"criterion {k:2d} {status}: {entry['title']} [{notes}]")
