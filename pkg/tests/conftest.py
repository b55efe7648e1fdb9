import pytest

from pagecache_sim.engine import Engine
from pagecache_sim.page_cache import MemoryManager
from pagecache_sim.storage import StorageDevice

MEM_BW = 4812e6
DISK_BW = 465e6
REMOTE_BW = 445e6
NET_BW = 3000e6


def make_mm(total=100 * 10**9, engine=None, **kw):
    engine = engine or Engine()
    memory = StorageDevice("memory", total, MEM_BW, MEM_BW).attach(engine)
    disk = StorageDevice("disk", 10**13, DISK_BW, DISK_BW).attach(engine)
    return MemoryManager(engine, total, memory, disk, **kw)


@pytest.fixture
def engine():
    return Engine()


@pytest.fixture
def mm():
    return make_mm()


# -- acceptance report ------------------------------------------------------

_criteria: dict[int, list[bool]] = {}


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("acceptance")
    if marker and (report.when == "call" or report.failed or report.skipped):
        _criteria.setdefault(marker.args[0], []).append(report.passed and report.when == "call")
    return report


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        results = _criteria[n]
        verdict = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"acceptance criterion {n}: {verdict} ({sum(results)}/{len(results)} checks)")
