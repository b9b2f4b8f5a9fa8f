from __future__ import annotations

from contextlib import contextmanager

import pytest

from lighthouse.pipeline import build_synthetic
from lighthouse.store import open_manifest
from lighthouse.synthetic import SyntheticWorldSpec

ACCEPTANCE_LINES: list[str] = []


@contextmanager
def criterion(number: int, title: str):
    """Record a PASS/FAIL line for an acceptance criterion, re-raising failures."""
    try:
        yield
    except BaseException as exc:
        ACCEPTANCE_LINES.append(f"[FAIL] criterion {number:2d}: {title} ({type(exc).__name__}: {str(exc)[:160]})")
        raise
    ACCEPTANCE_LINES.append(f"[PASS] criterion {number:2d}: {title}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def world_factory(tmp_path_factory):
    """Build (once per session) the 5x5-tile, 512-cell synthetic world for a seed."""
    built = {}

    def make(seed: int, **kw):
        key = (seed, tuple(sorted(kw.items())))
        if key not in built:
            spec = SyntheticWorldSpec(seed=seed, **kw)
            out = tmp_path_factory.mktemp(f"world{seed}")
            build_synthetic(spec, out, workers=1)
            built[key] = out
        return built[key]

    return make


@pytest.fixture(scope="session")
def world7(world_factory):
    return world_factory(7)


@pytest.fixture(scope="session")
def manifest7(world7):
    return open_manifest(world7)


@pytest.fixture(scope="session")
def small_world(world_factory):
    """A cheap 2x2-tile world for fast engine tests."""
    return world_factory(3, n_lat=2, n_lon=3, grid=96, islands=6, radius_min=0.05, radius_max=0.3)
