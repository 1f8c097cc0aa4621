"""Collects acceptance-criterion outcomes and prints one line per criterion after the run."""

from collections import OrderedDict

_RESULTS = OrderedDict()  # criterion id -> list of (part, outcome)


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _RESULTS.setdefault(props["criterion"], []).append((props.get("part", ""), report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_RESULTS, key=lambda c: int(c)):
        parts = _RESULTS[cid]
        ok = all(o == "passed" for _, o in parts)
        detail = "; ".join(f"{p}: {'PASS' if o == 'passed' else 'FAIL'}" for p, o in parts)
        tr.write_line(f"criterion {cid:>2} {'PASS' if ok else 'FAIL'}  ({detail})")
