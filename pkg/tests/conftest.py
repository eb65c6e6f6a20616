import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "stiffkit",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "stiffkit"))

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    entry = _CRITERIA.setdefault(n, {"ok": True, "tests": [], "notes": []})
    if call.when == "setup" and call.excinfo is not None:
        entry["ok"] = False
        entry["notes"].append(f"{item.name}: setup error")
    if call.when != "call":
        return
    entry["tests"].append(item.name)
    xfail = item.get_closest_marker("xfail")
    if call.excinfo is not None:
        entry["ok"] = False
        why = f" (expected: {xfail.kwargs.get('reason', '')})" if xfail else ""
        entry["notes"].append(f"{item.name} failed{why}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["ok"] else "FAIL"
        line = f"criterion {n:2d}: {status}  [{len(e['tests'])} test(s)]"
        terminalreporter.write_line(line)
        for note in e["notes"]:
            terminalreporter.write_line(f"    {note}")
