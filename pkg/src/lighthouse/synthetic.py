"""Seeded synthetic worlds: a noisy continent plus islands, some with lakes.

Stands in for real land-polygon sources at desk scale.  The same spec always
yields byte-identical rings.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .geo import TileId
from .ingest import LandPolygonSet


@dataclass(frozen=True)
class SyntheticWorldSpec:
    seed: int = 7
    lat0: int = 40
    lon0: int = -70
    n_lat: int = 5
    n_lon: int = 5
    grid: int = 512
    islands: int = 24
    radius_min: float = 0.04
    radius_max: float = 0.45
    noise: float = 0.25
    lake_fraction: float = 0.35
    continent: bool = True

    def tiles(self) -> list[TileId]:
        return [TileId(self.lat0 + i, self.lon0 + j) for i in range(self.n_lat) for j in range(self.n_lon)]

    def contains(self, lat: float, lon: float) -> bool:
        return self.lat0 <= lat < self.lat0 + self.n_lat and self.lon0 <= lon < self.lon0 + self.n_lon

    def to_json(self) -> dict:
        return asdict(self)


def _blob(rng, lat: float, lon: float, radius: float, noise: float, n: int, clockwise: bool) -> np.ndarray:
    theta = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    r = np.ones(n)
    for k in range(2, 9):
        r += noise / k * rng.uniform(-1, 1) * np.cos(k * theta + rng.uniform(0, 2 * math.pi))
    r = radius * np.clip(r, 0.35, None)
    # keep shapes roughly round on the ground rather than in degrees
    squash = 1.0 / max(math.cos(math.radians(lat)), 0.2)
    ring = np.column_stack([lat + r * np.sin(theta), lon + squash * r * np.cos(theta)])
    if clockwise:
        ring = ring[::-1]
    return np.vstack([ring, ring[:1]])


def generate_polygons(spec: SyntheticWorldSpec) -> LandPolygonSet:
    rng = np.random.default_rng(spec.seed)
    rings = []
    if spec.continent:
        # a landmass along the western edge whose interior tiles are all land
        n = 400
        t = np.linspace(0.0, 1.0, n)
        lat_s, lat_n = spec.lat0 - 0.5, spec.lat0 + spec.n_lat + 0.5
        coast_lat = lat_s + (lat_n - lat_s) * t
        wiggle = sum(
            0.08 / k * rng.uniform(-1, 1) * np.sin(2 * math.pi * k * t * 6 + rng.uniform(0, 2 * math.pi))
            for k in range(1, 9)
        )
        coast_lon = spec.lon0 + min(1.6, 0.32 * spec.n_lon) + wiggle
        west = spec.lon0 - 0.5
        ring = np.vstack(
            [
                [[lat_s, west]],
                np.column_stack([coast_lat, coast_lon]),
                [[lat_n, west]],
                [[lat_s, west]],
            ]
        )
        rings.append(ring)
    for _ in range(spec.islands):
        lat = rng.uniform(spec.lat0 + 0.2, spec.lat0 + spec.n_lat - 0.2)
        lon = rng.uniform(spec.lon0 + min(2.0, 0.4 * spec.n_lon), spec.lon0 + spec.n_lon - 0.2)
        radius = rng.uniform(spec.radius_min, spec.radius_max)
        n = int(rng.integers(48, 160))
        rings.append(_blob(rng, lat, lon, radius, spec.noise, n, clockwise=False))
        if rng.uniform() < spec.lake_fraction:
            rings.append(_blob(rng, lat, lon, radius * 0.3, spec.noise * 0.5, 48, clockwise=True))
    return LandPolygonSet(rings)
