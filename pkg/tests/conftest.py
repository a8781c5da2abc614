import functools

import pytest

from dynreg.checker import verify
from dynreg.core import Configuration, Entry, Operation
from dynreg.scenario import Scenario
from dynreg.trace import RunTrace


def entry(pid, op, num=1):
    return Entry(pid, op, num)


def cfg(mem, rem=()):
    return Configuration(frozenset(mem), frozenset(rem))


WR = Operation.write
RD = Operation.read
REC = Operation.reconfig


@functools.lru_cache(maxsize=None)
def scenario_verdicts(name, seeds, max_ops=None, period=None):
    """Verdicts for seeds 0..seeds-1, computed once per session on the serialized traces."""
    sc = Scenario.canned(name)
    if period is not None:
        sc = sc.with_overrides(period=period)
    if max_ops is not None:
        sc.plan["max_ops"] = max_ops
    return tuple(verify(RunTrace.loads(sc.build(seed).run().dumps())) for seed in range(seeds))


# -- acceptance reporting: one pass/fail line per criterion --------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not report.failed:
        return
    number, title = mark.args
    ok, _ = _criteria.get(number, (True, title))
    _criteria[number] = (ok and not report.failed, title)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        ok, title = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
