import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.get_closest_marker("criterion"):
        num = item.get_closest_marker("criterion").args[0]
        detail = dict(rep.user_properties).get("detail", "")
        _criteria.append((num, "PASS" if rep.passed else "FAIL", item.name, detail))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num, status, name, detail in sorted(_criteria):
        terminalreporter.write_line(f"criterion {num}: {status}  {name}  {detail}")
