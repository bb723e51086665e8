import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from occgrid.grid import VoxelConfig  # noqa: E402


@pytest.fixture
def nusc():
    return VoxelConfig.nuscenes()


@pytest.fixture
def small_cfg():
    """32 x 32 x 8 lattice at 0.2 m."""
    return VoxelConfig(-3.2, 3.2, -3.2, 3.2, -0.8, 0.8, 0.2)


@pytest.fixture
def mid_cfg():
    """128 x 128 x 16 lattice at 0.2 m."""
    return VoxelConfig(-12.8, 12.8, -12.8, 12.8, -2.0, 1.2, 0.2)


# One summary line per acceptance criterion, printed after the run.
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    prev = _CRITERIA.get(n, (title, True, 0.0))
    if rep.when == "setup" and rep.passed:
        return
    _CRITERIA[n] = (title, prev[1] and rep.passed, prev[2] + rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, dur = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}  ({dur:.2f} s)")
