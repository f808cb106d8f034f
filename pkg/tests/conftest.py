"""Shared fixtures and the per-criterion acceptance summary."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from npnslab.npns import PhysicalParams  # noqa: E402
from npnslab.spectral import Grid  # noqa: E402

_outcomes: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    entry = _outcomes.setdefault(number, {"title": title, "passed": True, "seen": False})
    if report.when == "call" or report.outcome != "passed":
        entry["seen"] = True
        entry["passed"] &= report.outcome == "passed"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        entry = _outcomes[number]
        if not entry["seen"]:
            continue
        verdict = "PASS" if entry["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {entry['title']}")


@pytest.fixture
def grid16():
    return Grid(16)


@pytest.fixture
def grid32():
    return Grid(32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def kolmogorov16(grid16):
    return PhysicalParams.kolmogorov(grid16, amplitude=1.0)
