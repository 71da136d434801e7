import datetime as dt

import numpy as np
import pytest

from wbsnow.grid import GeoGrid, GridField, SurfaceMask


def daily(start, n):
    return [start + dt.timedelta(days=i) for i in range(n)]


def make_field(grid, values, start=dt.date(2001, 1, 1), units="K", variable="x"):
    values = np.asarray(values, dtype=float)
    return GridField(grid, daily(start, values.shape[0]), values, units, variable)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid10():
    return GeoGrid.global_grid(10.0)


@pytest.fixture
def land10(grid10):
    return SurfaceMask.all_land(grid10)


ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, title, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}: {detail}")
