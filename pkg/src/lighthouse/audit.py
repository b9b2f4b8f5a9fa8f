"""Dataset audit: storage round-trips, thinning constraints, engine vs. oracle."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .coast_tree import audit_tree, deserialize_tree, serialize_tree
from .engine import Engine
from .errors import LighthouseError
from .ingest import edge_set
from .oracle import FlatIndex, brute_nearest
from .router import GeneratorSet, Router, audit_downsampling, downsample, polylines_for, serialize_generators
from .store import Manifest, deserialize_raster, open_manifest, serialize_raster
from .workloads import stratified_points

log = logging.getLogger("lighthouse.audit")


@dataclass
class AuditReport:
    failures: list[str] = field(default_factory=list)
    checks: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def fail(self, message: str) -> None:
        self.failures.append(message)


def recover_edge_sets(manifest: Manifest) -> list:
    """Rebuild each tile's edge set from the points stored in its tree."""
    out = []
    for entry in manifest.tiles:
        tree = manifest.load_tree(entry.tile)
        if not len(tree):
            out.append(edge_set(entry.tile, np.empty((0, 2), np.int64), manifest.n_rows, manifest.n_cols))
            continue
        lat = np.degrees(tree.lat)
        lon = np.degrees(tree.lon)
        rows = np.rint((entry.tile.lat_floor + 1 - lat) * manifest.n_rows - 0.5).astype(np.int64)
        cols = np.rint((lon - entry.tile.lon_floor) * manifest.n_cols - 0.5).astype(np.int64)
        cells = np.unique(np.column_stack([rows, cols]), axis=0)
        out.append(edge_set(entry.tile, cells, manifest.n_rows, manifest.n_cols))
    return out


def audit_storage(manifest: Manifest, report: AuditReport) -> None:
    for entry in manifest.tiles:
        tile = entry.tile
        try:
            raw = manifest.tree_path(tile).read_bytes()
            tree = deserialize_tree(raw)
            if serialize_tree(tree) != raw:
                report.fail(f"tile {tile}: tree does not re-serialize byte-identically")
            problems = audit_tree(tree)
            if problems:
                report.fail(f"tile {tile}: tree audit: {problems[0]}")
            if len(tree) != entry.edge_points:
                report.fail(f"tile {tile}: tree has {len(tree)} points, manifest says {entry.edge_points}")
            raw = manifest.raster_path(tile).read_bytes()
            raster = deserialize_raster(raw)
            if serialize_raster(raster, manifest.chunk_size) != raw:
                report.fail(f"tile {tile}: raster does not re-serialize byte-identically")
        except LighthouseError as exc:
            report.fail(f"tile {tile}: {exc}")
        report.checks["tiles"] = report.checks.get("tiles", 0) + 1
    try:
        raw = manifest.generator_path.read_bytes()
        if serialize_generators(manifest.load_generators()) != raw:
            report.fail("generator file does not re-serialize byte-identically")
    except LighthouseError as exc:
        report.fail(f"generators: {exc}")


def audit_generators(manifest: Manifest, report: AuditReport) -> None:
    lines = polylines_for(recover_edge_sets(manifest))
    gens = downsample(lines, manifest.max_gap_m)
    stored: GeneratorSet = manifest.load_generators()
    if serialize_generators(gens) != serialize_generators(stored):
        report.fail(f"stored generators ({len(stored)}) differ from re-derived generators ({len(gens)})")
    problems = audit_downsampling(lines, gens)
    for p in problems[:1]:
        report.fail(f"down-sampling: {p}")
    report.checks["polylines"] = len(lines)
    report.checks["generators"] = len(gens)


def audit_queries(manifest: Manifest, n: int, seed: int, report: AuditReport) -> None:
    if n <= 0:
        log.warning("no query points requested; engine-vs-oracle comparison skipped")
        return
    engine = Engine(manifest, Router(manifest.load_generators()), cache_capacity=None)
    flat = FlatIndex.from_dataset(manifest)
    for i, q in enumerate(stratified_points(manifest, n, seed)):
        got = engine.query(q)
        want = brute_nearest(flat, q)
        same = (got.tile, got.index) == (want.tile, want.index)
        close = abs(got.distance_m - want.distance_m) <= 1e-9 * max(want.distance_m, 1.0)
        if not (same and close):
            report.fail(
                f"query {i} ({q.lat:.6f}, {q.lon:.6f}): engine {got.tile}#{got.index} {got.distance_m:.6f} m, "
                f"oracle {want.tile}#{want.index} {want.distance_m:.6f} m"
            )
            break
    report.checks["queries"] = n


def run_audit(manifest_path: str | Path, points: int = 1000, seed: int = 0, progress: Callable[[str], None] | None = None) -> AuditReport:
    report = AuditReport()
    say = progress or log.info
    try:
        manifest = open_manifest(manifest_path)
    except LighthouseError as exc:
        report.fail(f"manifest: {exc}")
        return report
    say(f"storage: {len(manifest.tiles)} tiles")
    audit_storage(manifest, report)
    if not report.ok:
        return report
    say("down-sampling constraints")
    audit_generators(manifest, report)
    say(f"engine vs oracle: {points} points")
    audit_queries(manifest, points, seed, report)
    return report
