"""Brute-force reference implementations.

These share nothing with the production search or convolution code apart
from the distance kernel in :mod:`lighthouse.geo`; they are slow on purpose
and exist so tests and ``lighthouse audit`` can check the fast paths.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyTree
from .geo import EARTH_RADIUS_M, GeoPoint, TileId, haversine_angle

_KX = ((-1, 0, 1), (-2, 0, 2), (-1, 0, 1))
_KY = ((-1, -2, -1), (0, 0, 0), (1, 2, 1))


@dataclass
class OracleHit:
    point: GeoPoint
    distance_m: float
    index: int
    tile: TileId


class FlatIndex:
    """Every coastal point of a dataset in one flat array, with (tile, index) provenance."""

    def __init__(self, lat: np.ndarray, lon: np.ndarray, tiles: np.ndarray, index: np.ndarray):
        self.lat = np.asarray(lat, dtype=np.float64)
        self.lon = np.asarray(lon, dtype=np.float64)
        self.tiles = np.asarray(tiles, dtype=np.int64).reshape(-1, 2)
        self.index = np.asarray(index, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.lat)

    @classmethod
    def from_arrays(cls, per_tile: dict[TileId, tuple[np.ndarray, np.ndarray]]) -> "FlatIndex":
        """Build from ``{tile: (lat_rad, lon_rad)}`` in each tile's own point order."""
        lats, lons, tiles, idx = [], [], [], []
        for tile in sorted(per_tile):
            la, lo = per_tile[tile]
            n = len(la)
            lats.append(np.asarray(la, dtype=np.float64))
            lons.append(np.asarray(lo, dtype=np.float64))
            tiles.append(np.tile(np.asarray(tile, dtype=np.int64), (n, 1)))
            idx.append(np.arange(n))
        if not lats:
            return cls(np.empty(0), np.empty(0), np.empty((0, 2)), np.empty(0))
        return cls(np.concatenate(lats), np.concatenate(lons), np.concatenate(tiles), np.concatenate(idx))

    @classmethod
    def from_dataset(cls, manifest) -> "FlatIndex":
        """Read the raw point arrays of every tree file named by a manifest."""
        per_tile = {}
        for entry in manifest.tiles:
            data = Path(manifest.root, entry.tree_file).read_bytes()
            n = struct.unpack_from("<Q", data, 12)[0]
            pts = np.frombuffer(data, dtype="<f8", count=2 * n, offset=32).reshape(n, 2)
            per_tile[entry.tile] = (pts[:, 0], pts[:, 1])
        return cls.from_arrays(per_tile)


def brute_nearest(idx: FlatIndex, q: GeoPoint) -> OracleHit:
    """Linear scan; ties go to the lexicographically smallest (tile, index)."""
    if len(idx) == 0:
        raise EmptyTree("flat index is empty")
    qlat, qlon = q.radians
    d = haversine_angle(qlat, qlon, idx.lat, idx.lon)
    best = d.min()
    tied = np.nonzero(d == best)[0]
    keys = [(int(idx.tiles[i, 0]), int(idx.tiles[i, 1]), int(idx.index[i])) for i in tied]
    k = tied[min(range(len(tied)), key=keys.__getitem__)]
    point = GeoPoint.from_radians(idx.lat[k], idx.lon[k])
    return OracleHit(point, float(best) * EARTH_RADIUS_M, int(idx.index[k]), TileId(int(idx.tiles[k, 0]), int(idx.tiles[k, 1])))


def brute_nearest_generator(lat: np.ndarray, lon: np.ndarray, q: GeoPoint) -> int:
    """Index of the nearest of a set of points (radians); ties -> lowest index."""
    qlat, qlon = q.radians
    d = haversine_angle(qlat, qlon, lat, lon)
    return int(np.flatnonzero(d == d.min())[0])


def brute_sobel(bits) -> list[tuple[int, int]]:
    """Direct 3x3 Sobel convolution with replicate padding, one cell at a time."""
    mask = getattr(bits, "bits", bits)
    rows, cols = len(mask), len(mask[0])
    if rows < 2 or cols < 2:
        raise ValueError("mask smaller than 2x2")
    grid = [[1 if mask[r][c] else 0 for c in range(cols)] for r in range(rows)]
    out = []
    for r in range(rows):
        for c in range(cols):
            gx = gy = 0
            for i in range(3):
                rr = min(max(r + i - 1, 0), rows - 1)
                for j in range(3):
                    cc = min(max(c + j - 1, 0), cols - 1)
                    v = grid[rr][cc]
                    gx += _KX[i][j] * v
                    gy += _KY[i][j] * v
            if gx * gx + gy * gy > 0:
                out.append((r, c))
    return out


def brute_point_in_rings(rings, lat: float, lon: float) -> bool:
    """Even-odd crossing test of one point against every ring (vertices as (lat, lon))."""
    inside = False
    for ring in rings:
        pts = [tuple(map(float, v)) for v in ring]
        if pts[0] != pts[-1]:
            pts.append(pts[0])
        for (y0, x0), (y1, x1) in zip(pts, pts[1:]):
            if (y0 > lat) != (y1 > lat):
                x = (x1 - x0) * (lat - y0) / (y1 - y0) + x0
                if lon < x:
                    inside = not inside
    return inside
