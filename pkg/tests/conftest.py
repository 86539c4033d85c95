from __future__ import annotations

import pytest

CRITERIA = {
    1: "registry exactness",
    2: "initial conditions",
    3: "order independence",
    4: "exact oracle agreement",
    5: "ODE correctness",
    6: "named constants",
    7: "trajectory concentration",
    8: "subcritical behavior",
    9: "supercritical behavior",
    10: "threshold bracket",
    11: "collapse certificates",
}

_results: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record a verdict for an acceptance criterion, then assert it."""

    def check(num: int, ok: bool, detail: str = "") -> None:
        prev = _results.get(num, (True, ""))
        merged = "; ".join(x for x in (prev[1], detail) if x)
        _results[num] = (prev[0] and bool(ok), merged)
        assert ok, f"criterion {num} ({CRITERIA[num]}): {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num, name in CRITERIA.items():
        if num in _results:
            ok, detail = _results[num]
            verdict = "PASS" if ok else "FAIL"
        else:
            verdict, detail = "NOT RUN", ""
        line = f"criterion {num:2d} {verdict:7s} {name}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    mark = item.get_closest_marker("criterion")
    if mark and report.when == "call" and report.failed:
        num = mark.args[0]
        prev = _results.get(num, (True, ""))
        if prev[0]:
            _results[num] = (False, "; ".join(x for x in (prev[1], f"{item.name} raised") if x))
    return report
