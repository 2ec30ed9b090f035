import pytest

_outcomes: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    entry = _outcomes.setdefault(number, {"title": title, "passed": True, "notes": [], "failed": []})
    if rep.failed:
        entry["passed"] = False
        entry["failed"].append(item.name)
    for key, value in item.user_properties:
        if key == "detail" and value not in entry["notes"]:
            entry["notes"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        e = _outcomes[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if e['passed'] else 'FAIL'}  {e['title']}")
        for note in e["notes"]:
            terminalreporter.write_line(f"               {note}")
        for name in e["failed"]:
            terminalreporter.write_line(f"               failed: {name}")


@pytest.fixture
def detail(request):
    """Attach a one-line result note to the acceptance summary."""
    def add(text: str) -> None:
        request.node.user_properties.append(("detail", text))
    return add
