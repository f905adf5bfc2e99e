import re

import pytest

# criterion number -> {"parts": {part: outcome}, "notes": [..]}
ACCEPTANCE = {}
_NAME = re.compile(r"test_c(\d+)([a-z]?)_")


def _slot(n):
    return ACCEPTANCE.setdefault(n, {"parts": {}, "notes": []})


@pytest.fixture
def note(request):
    """note(text): attach a measured value to this test's acceptance line."""
    m = _NAME.match(request.node.name)

    def add(text):
        if m:
            _slot(int(m.group(1)))["notes"].append(f"{m.group(2)}{': ' if m.group(2) else ''}{text}")
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = _NAME.match(item.name)
    if not m or item.module.__name__.split(".")[-1] != "test_acceptance":
        return
    part = m.group(2) or "-"
    parts = _slot(int(m.group(1)))["parts"]
    if rep.when == "call":
        parts[part] = parts.get(part, True) and rep.passed
    elif rep.failed:
        parts[part] = False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        s = ACCEPTANCE[n]
        ok = bool(s["parts"]) and all(s["parts"].values())
        parts = "".join(f" {p}={'ok' if v else 'FAIL'}" for p, v in sorted(s["parts"].items()) if p != "-")
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}{parts}  {'; '.join(s['notes'])}")


@pytest.fixture(scope="session")
def suite_run():
    """The default benchmark suite, run once with first-launch traces."""
    import time
    from strela import bench
    traces = {}
    t = time.perf_counter()
    results = bench.run_suite(traces=traces)
    return results, traces, time.perf_counter() - t
