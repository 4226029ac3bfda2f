import time

import pytest

SUITE_BUDGET_S = 120.0
_lines: list[str] = []
_start = time.perf_counter()


@pytest.fixture
def report():
    """Record one acceptance verdict line; all lines are echoed at the end of the run."""

    def add(number: int, title: str, ok: bool, detail: str):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _lines.append(line)
        print(line)
        return ok

    return add


def pytest_sessionstart(session):
    global _start
    _start = time.perf_counter()


def pytest_sessionfinish(session, exitstatus):
    session.config._suite_elapsed = elapsed = time.perf_counter() - _start
    if elapsed > SUITE_BUDGET_S and session.exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _lines:
        return
    elapsed = getattr(config, "_suite_elapsed", time.perf_counter() - _start)
    terminalreporter.section("acceptance criteria")
    for line in sorted(_lines, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
    ok = elapsed <= SUITE_BUDGET_S
    terminalreporter.write_line(
        f"criterion 10 {'PASS' if ok else 'FAIL'}  full suite runtime: {elapsed:.1f} s (budget {SUITE_BUDGET_S:.0f} s)"
    )
