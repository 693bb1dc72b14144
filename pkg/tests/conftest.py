"""Collects acceptance results and prints one PASS/FAIL line per criterion."""

import pytest

TITLES = {
    1: "cumulant algebra round trip and fourth-cumulant identity",
    2: "Edgeworth curve beats Gaussian on skewed init; symmetric curves coincide",
    3: "analytic gradients match central differences",
    4: "NTK drift at initialization scales like n^-1/2",
    5: "third-order kernel gives the NTK time derivative",
    6: "linear flow closed forms match ODE integration",
    7: "exponential training convergence and monotone loss",
    8: "training stability deviation scales like n^-1/2",
    9: "evolved density normalization, two paths, concentration",
    10: "Prokhorov engine matches subset enumeration; metric axioms",
    11: "Prokhorov distance after training scales like n^-1/2",
}

_results: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when == "teardown" or (rep.when == "setup" and rep.passed):
        return
    number = marker.args[0]
    entry = _results.setdefault(number, {"ok": True, "details": []})
    entry["ok"] = entry["ok"] and rep.passed
    entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]
    item.user_properties[:] = [p for p in item.user_properties if p[0] != "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        status = "PASS" if entry["ok"] else "FAIL"
        detail = "; ".join(entry["details"])
        line = f"{status} criterion {number:2d}: {TITLES[number]}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
