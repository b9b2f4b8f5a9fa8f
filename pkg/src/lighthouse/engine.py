"""Query runtime: nearest coastal point and land-cover class for any location.

Tiles are loaded on demand into a bounded LRU cache.  A query first asks the
tile containing the point (or, on the high seas, the tile the router picks),
then widens the search to every tile that could still hold a closer point:

* tiles owning a generator within ``d + max_gap_m`` of the query, where ``d``
  is the best distance found so far.  Every coastal point lies within
  ``max_gap_m`` of a generator of its own tile, so the true nearest point's
  tile is always among them;
* the 8 neighbours of the containing tile when the query is closer than
  ``d`` to the tile boundary.

The answer is therefore the exact global nearest point, whatever is cached.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from concurrent.futures import Future
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .coast_tree import CoastTree
from .errors import InvalidCapacity, NoCoastline
from .geo import EARTH_RADIUS_M, GeoPoint, TileId, min_distance_to_tile_boundary, tile_neighbors, tile_of
from .ingest import WATER, ClassLabel, cell_of
from .router import Router
from .store import Manifest, RasterHandle, open_manifest

# widening slack on the routing bound, radians (about 6 mm)
_BOUND_EPS = 1e-9


@dataclass(frozen=True)
class QueryResult:
    distance_m: float
    nearest: GeoPoint
    class_label: ClassLabel
    tile: TileId
    index: int

    def to_json(self) -> dict:
        return {
            "distance_m": round(self.distance_m, 6),
            "nearest": {"lat": self.nearest.lat, "lon": self.nearest.lon},
            "class": self.class_label.name,
            "tile": {"lat_floor": self.tile.lat_floor, "lon_floor": self.tile.lon_floor},
        }


@dataclass(frozen=True)
class EngineStats:
    queries: int = 0
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    loads: int = 0
    cached: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)


class LoadedTile:
    __slots__ = ("tree", "raster")

    def __init__(self, tree: CoastTree, raster: RasterHandle):
        self.tree = tree
        self.raster = raster


class Engine:
    """Cache-backed query engine.  All public methods are thread-safe."""

    def __init__(self, manifest: Manifest, router: Router, cache_capacity: int | None = 64):
        if cache_capacity is not None and (isinstance(cache_capacity, bool) or cache_capacity < 1):
            raise InvalidCapacity(f"cache capacity must be >= 1, got {cache_capacity}")
        self.manifest = manifest
        self.router = router
        self.capacity = cache_capacity
        self.max_gap_m = manifest.max_gap_m
        self._cache: OrderedDict[TileId, LoadedTile] = OrderedDict()
        self._inflight: dict[TileId, Future] = {}
        self._lock = threading.Lock()
        self._counts = {"queries": 0, "hits": 0, "misses": 0, "evictions": 0, "loads": 0}

    # -- cache --------------------------------------------------------------

    def _tile(self, tile: TileId) -> LoadedTile:
        with self._lock:
            entry = self._cache.get(tile)
            if entry is not None:
                self._cache.move_to_end(tile)
                self._counts["hits"] += 1
                return entry
            self._counts["misses"] += 1
            fut = self._inflight.get(tile)
            owner = fut is None
            if owner:
                fut = self._inflight[tile] = Future()
        if not owner:
            return fut.result()
        try:
            entry = LoadedTile(self.manifest.load_tree(tile), self.manifest.open_raster(tile))
        except BaseException as exc:
            with self._lock:
                del self._inflight[tile]
            fut.set_exception(exc)
            raise
        with self._lock:
            self._counts["loads"] += 1
            self._cache[tile] = entry
            del self._inflight[tile]
            # evicted handles close when their last user drops them
            while self.capacity is not None and len(self._cache) > self.capacity:
                self._cache.popitem(last=False)
                self._counts["evictions"] += 1
        fut.set_result(entry)
        return entry

    def cached_tiles(self) -> list[TileId]:
        with self._lock:
            return list(self._cache)

    def stats(self) -> EngineStats:
        with self._lock:
            return EngineStats(cached=len(self._cache), **self._counts)

    # -- queries --------------------------------------------------------------

    def candidate_tile(self, q: GeoPoint) -> TileId:
        t = tile_of(q)
        return t if t in self.manifest else self.router.route(q)

    def query(self, q: GeoPoint) -> QueryResult:
        with self._lock:
            self._counts["queries"] += 1
        qlat, qlon = q.radians
        home = tile_of(q)
        in_dataset = home in self.manifest
        start = home if in_dataset else self.router.route(q)

        best = (math.inf, start, -1)
        searched: dict[TileId, LoadedTile] = {}

        def search(tile: TileId) -> None:
            nonlocal best
            entry = searched[tile] = self._tile(tile)
            tree = entry.tree
            if not len(tree):
                return
            angle, idx = tree.nearest_angle(qlat, qlon)
            cand = (angle, tile, idx)
            if cand < best:
                best = cand

        search(start)
        # the nearest generator is itself a coastal point, so it also bounds d
        gen_angle, _ = self.router.nearest_generator_angle(qlat, qlon)
        bound = min(best[0], gen_angle)
        reach = bound + self.max_gap_m / EARTH_RADIUS_M + _BOUND_EPS
        candidates = set(self.router.tiles_within_angle(qlat, qlon, min(reach, math.pi)))
        if min_distance_to_tile_boundary(q, home) < bound * EARTH_RADIUS_M:
            candidates.update(t for t in tile_neighbors(home) if t in self.manifest)
        for tile in sorted(candidates.difference(searched)):
            search(tile)

        angle, tile, idx = best
        if idx < 0:
            raise NoCoastline("dataset contains no coastal points")
        if in_dataset:
            raster = searched[home].raster
            label = raster.read_class(*cell_of(home, q, raster.n_rows, raster.n_cols))
        else:
            label = ClassLabel(WATER)
        point = searched[tile].tree.point(idx)
        return QueryResult(angle * EARTH_RADIUS_M, point, label, tile, idx)

    def query_batch(self, qs: Sequence[GeoPoint]) -> list[QueryResult]:
        """Answer many queries, visiting them grouped by tile to keep the cache warm."""
        keys = [self.candidate_tile(q) for q in qs]
        order = sorted(range(len(qs)), key=lambda i: keys[i])
        out: list[QueryResult | None] = [None] * len(qs)
        for i in order:
            out[i] = self.query(qs[i])
        return out


def open_engine(manifest_path: str | Path, cache_capacity: int | None = 64) -> Engine:
    """Open a dataset: parse the manifest and build the router; no tiles are loaded."""
    if cache_capacity is not None and (isinstance(cache_capacity, bool) or cache_capacity < 1):
        raise InvalidCapacity(f"cache capacity must be >= 1, got {cache_capacity}")
    manifest = open_manifest(manifest_path)
    return Engine(manifest, Router(manifest.load_generators()), cache_capacity)


def query(e: Engine, q: GeoPoint) -> QueryResult:
    return e.query(q)


def query_batch(e: Engine, qs: Sequence[GeoPoint]) -> list[QueryResult]:
    return e.query_batch(qs)


def stats(e: Engine) -> EngineStats:
    return e.stats()
