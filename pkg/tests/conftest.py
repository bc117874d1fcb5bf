import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from oracle import FIXTURE_SAFE

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture
def fixture_safe(tmp_path) -> Path:
    """Writable copy of the checked-in SAFE fixture."""
    dst = tmp_path / FIXTURE_SAFE.name
    shutil.copytree(FIXTURE_SAFE, dst)
    return dst


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def server():
    from mockserver import MockServer

    with MockServer() as s:
        yield s


# ---------------------------------------------------------------- acceptance criteria report

_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, [title, True, 0.0])
    entry[1] = entry[1] and rep.passed
    entry[2] += rep.duration


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, secs = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}  ({secs:.2f}s)")
