"""Seeded query workloads for audits, benchmarks and tests."""

from __future__ import annotations

import math

import numpy as np

from .geo import GeoPoint, TileId, tile_of
from .store import Manifest

BORDER_BAND_DEG = 0.02


def _inside(rng, tiles: list[TileId]) -> GeoPoint:
    t = tiles[rng.integers(len(tiles))]
    return GeoPoint(t.lat_floor + rng.uniform(0, 1), t.lon_floor + rng.uniform(0, 1))


def _near_border(rng, tiles: list[TileId]) -> GeoPoint:
    t = tiles[rng.integers(len(tiles))]
    offset = rng.uniform(-BORDER_BAND_DEG, BORDER_BAND_DEG)
    along = rng.uniform(0, 1)
    side = rng.integers(4)
    if side == 0:
        lat, lon = t.lat_floor + offset, t.lon_floor + along
    elif side == 1:
        lat, lon = t.lat_floor + 1 + offset, t.lon_floor + along
    elif side == 2:
        lat, lon = t.lat_floor + along, t.lon_floor + offset
    else:
        lat, lon = t.lat_floor + along, t.lon_floor + 1 + offset
    return GeoPoint(min(max(lat, -90.0), 90.0), lon)


def _high_seas(rng, tiles: list[TileId], members: set, margin: float = 6.0) -> GeoPoint:
    lats = [t.lat_floor for t in tiles]
    lons = [t.lon_floor for t in tiles]
    while True:
        if rng.uniform() < 0.2:
            # anywhere on the globe, uniform by area
            lat = math.degrees(math.asin(rng.uniform(-1, 1)))
            lon = rng.uniform(-180, 180)
        else:
            lat = rng.uniform(max(min(lats) - margin, -90), min(max(lats) + 1 + margin, 90))
            lon = rng.uniform(min(lons) - margin, max(lons) + 1 + margin)
        p = GeoPoint(lat, lon)
        if tile_of(p) not in members:
            return p


def stratified_points(manifest: Manifest, n: int, seed: int = 0, mix=(0.4, 0.3, 0.3)) -> list[GeoPoint]:
    """``n`` points: inside tiles, within 0.02 deg of tile borders, and on the high seas."""
    rng = np.random.default_rng(seed)
    tiles = manifest.tile_ids()
    members = set(tiles)
    n_in = int(round(n * mix[0]))
    n_border = int(round(n * mix[1]))
    n_sea = n - n_in - n_border
    pts = [_inside(rng, tiles) for _ in range(n_in)]
    pts += [_near_border(rng, tiles) for _ in range(n_border)]
    pts += [_high_seas(rng, tiles, members) for _ in range(n_sea)]
    return pts


def uniform_points(manifest: Manifest, n: int, seed: int = 0, margin: float = 2.0) -> list[GeoPoint]:
    """Uniform over the dataset's bounding box widened by ``margin`` degrees."""
    rng = np.random.default_rng(seed)
    tiles = manifest.tile_ids()
    lat0 = max(min(t.lat_floor for t in tiles) - margin, -90)
    lat1 = min(max(t.lat_floor for t in tiles) + 1 + margin, 90)
    lon0 = min(t.lon_floor for t in tiles) - margin
    lon1 = max(t.lon_floor for t in tiles) + 1 + margin
    return [GeoPoint(rng.uniform(lat0, lat1), rng.uniform(lon0, lon1)) for _ in range(n)]


def coastal_points(manifest: Manifest, n: int, seed: int = 0, spread_deg: float = 0.01) -> list[GeoPoint]:
    """Points scattered around random router generators (i.e. near the coast)."""
    rng = np.random.default_rng(seed)
    gens = manifest.load_generators()
    pick = rng.integers(len(gens), size=n)
    lat = np.degrees(gens.lat[pick]) + rng.normal(0, spread_deg, n)
    lon = np.degrees(gens.lon[pick]) + rng.normal(0, spread_deg, n)
    return [GeoPoint(float(min(max(a, -90.0), 90.0)), float(b)) for a, b in zip(lat, lon)]


WORKLOADS = {
    "mixed": stratified_points,
    "uniform": uniform_points,
    "coastal": coastal_points,
}
