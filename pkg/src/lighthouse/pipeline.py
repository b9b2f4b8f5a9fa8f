"""Dataset build driver: sources -> per-tile edges -> trees, rasters, router."""

from __future__ import annotations

import logging
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidParameter, MissingFile, NotALandTile
from .geo import TileId
from .ingest import (
    LandPolygonSet,
    RasterTile,
    build_tile,
    rasterize_polygons,
    read_image_source,
    read_ring_file,
    resample_nearest,
    tiles_touched,
)
from .router import DEFAULT_MAX_GAP_M, downsample, polylines_for
from .store import (
    DEFAULT_CHUNK_SIZE,
    GENERATORS_NAME,
    MANIFEST_NAME,
    Manifest,
    RasterHandle,
    deserialize_raster,
    open_manifest,
    write_dataset,
)
from .synthetic import SyntheticWorldSpec, generate_polygons

log = logging.getLogger("lighthouse.build")

IMAGE_SUFFIXES = (".pgm", ".png", ".tif", ".tiff")


@dataclass
class TileJob:
    tile: TileId
    grid: int
    source: str
    raster_path: Path | None = None
    polygons: LandPolygonSet | None = None


def _load_raster(path: Path) -> RasterTile:
    if path.suffix == ".lhrc":
        return deserialize_raster(path.read_bytes())
    raster, _ = read_image_source(path)
    return raster


def process_tile(job: TileJob):
    """Raster, edges and source tag for one tile, or ``None`` when it holds no land."""
    if job.raster_path is not None:
        raster = resample_nearest(_load_raster(job.raster_path), job.grid, job.grid)
    else:
        raster = rasterize_polygons(job.polygons, job.tile, job.grid, job.grid)
    try:
        edges, _ = build_tile(raster)
    except NotALandTile:
        return None
    return raster, edges, job.source


def discover_sources(source_dir: Path, grid: int) -> list[TileJob]:
    """Raster tiles win over vector rings for the same tile; vectors fill the gaps."""
    if not source_dir.is_dir():
        raise MissingFile(source_dir)
    jobs: dict[TileId, TileJob] = {}
    for path in sorted(source_dir.iterdir()):
        if path.suffix == ".lhrc":
            with RasterHandle(path) as h:
                tile = h.tile
            jobs[tile] = TileJob(tile, grid, "esa", raster_path=path)
        elif path.suffix.lower() in IMAGE_SUFFIXES and path.with_suffix(".json").exists():
            raster, tag = read_image_source(path)
            jobs[raster.tile] = TileJob(raster.tile, grid, tag, raster_path=path)
    rings = []
    for path in sorted(source_dir.glob("*.rings")):
        rings.extend(read_ring_file(path).rings)
    if rings:
        polys = LandPolygonSet(rings)
        for tile in tiles_touched(polys):
            jobs.setdefault(tile, TileJob(tile, grid, "osm", polygons=polys))
    return [jobs[t] for t in sorted(jobs)]


def synthetic_jobs(spec: SyntheticWorldSpec) -> list[TileJob]:
    polys = generate_polygons(spec)
    return [TileJob(t, spec.grid, "synthetic", polygons=polys) for t in spec.tiles()]


def _replace_dataset(staging: Path, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name in ("trees", "rasters"):
        if (out / name).exists():
            shutil.rmtree(out / name)
    for name in ("trees", "rasters", GENERATORS_NAME, MANIFEST_NAME):
        os.replace(staging / name, out / name)


def build_dataset(
    jobs: list[TileJob],
    out_dir: str | Path,
    max_gap_m: float = DEFAULT_MAX_GAP_M,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> Manifest:
    """Run the whole build; output appears in ``out_dir`` only if every tile succeeds."""
    if not jobs:
        raise InvalidParameter("no source tiles found")
    if any(j.grid < 2 for j in jobs):
        raise InvalidParameter("grid must be at least 2 cells per side")
    if not max_gap_m > 0:
        raise InvalidParameter(f"max_gap_m must be positive, got {max_gap_m}")
    out = Path(out_dir)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(process_tile, jobs))
    else:
        results = [process_tile(j) for j in jobs]
    built = [r for r in results if r is not None]
    for job, r in zip(jobs, results):
        if r is None:
            log.info("tile %s: no land, skipped", job.tile)
        else:
            log.info("tile %s: %d edge points (%s)", job.tile, len(r[1]), r[2])
    if not built:
        raise InvalidParameter("no source tile contains land")
    gens = downsample(polylines_for([e for _, e, _ in built]), max_gap_m)
    log.info("router: %d generators (max gap %.1f m)", len(gens), max_gap_m)
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        write_dataset(
            [(r, e) for r, e, _ in built],
            gens,
            staging,
            sources=[s for _, _, s in built],
            chunk_size=chunk_size,
        )
        _replace_dataset(staging, out)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return open_manifest(out / MANIFEST_NAME)


def build_synthetic(spec: SyntheticWorldSpec, out_dir: str | Path, max_gap_m: float = DEFAULT_MAX_GAP_M, workers: int = 1) -> Manifest:
    return build_dataset(synthetic_jobs(spec), out_dir, max_gap_m=max_gap_m, workers=workers)
