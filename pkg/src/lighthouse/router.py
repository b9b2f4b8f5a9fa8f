"""Route any point on Earth to the tiles that can hold its nearest coastline.

Coastal edge cells are chained into polylines, thinned to a sparse set of
generator points, and point location in the spherical Voronoi diagram of the
generators is answered as a nearest-generator search.  The two are the same
thing: a Voronoi cell is the set of points closer to its generator than to any
other.

Thinning keeps every polyline represented and never lets the arc between two
consecutive retained points exceed ``max_gap_m``.  That gives the bound the
engine relies on: for any coastal point ``c`` at distance ``d`` from a query,
some generator of ``c``'s tile lies within ``d + max_gap_m``.

Generator file layout (little-endian)::

    magic "LHVG" | version u16 | count u64
    | count x (lat f64, lon f64, lat_floor i16, lon_floor i16, pad u32)   radians
    | crc32 u32 of everything above
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .coast_tree import CoastTree, build_tree_radians
from .errors import BadMagic, ChecksumMismatch, FormatError, InvalidParameter, TruncatedPayload, VersionMismatch
from .geo import EARTH_RADIUS_M, GeoPoint, TileId, haversine_angle

DEFAULT_MAX_GAP_M = 1000.0

MAGIC = b"LHVG"
VERSION = 1
HEADER = struct.Struct("<4sHQ")
RECORD_DTYPE = np.dtype([("lat", "<f8"), ("lon", "<f8"), ("lat_floor", "<i2"), ("lon_floor", "<i2"), ("pad", "<u4")])

# 8-neighbour walk order: 4-neighbours first so chains follow straight runs
_STEPS = ((0, 1), (1, 0), (0, -1), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(eq=False)
class CoastPolyline:
    tile: TileId
    lat: np.ndarray  # radians
    lon: np.ndarray  # radians

    def __len__(self) -> int:
        return len(self.lat)

    @property
    def vertices(self) -> list[GeoPoint]:
        return [GeoPoint.from_radians(a, b) for a, b in zip(self.lat.tolist(), self.lon.tolist())]

    @classmethod
    def from_points(cls, tile: TileId, points: list[GeoPoint]) -> "CoastPolyline":
        lat = np.radians([p.lat for p in points])
        lon = np.radians([p.lon for p in points])
        return cls(TileId(*tile), np.asarray(lat, dtype=np.float64), np.asarray(lon, dtype=np.float64))

    def step_lengths_m(self) -> np.ndarray:
        if len(self) < 2:
            return np.empty(0)
        return haversine_angle(self.lat[:-1], self.lon[:-1], self.lat[1:], self.lon[1:]) * EARTH_RADIUS_M


def chain_edges(edges) -> list[CoastPolyline]:
    """Chain a tile's edge cells into 8-connected polylines.

    Walks start at the first unvisited cell in row-major order and extend in
    both directions through unvisited neighbours; a junction simply ends the
    walk and the remaining branches start polylines of their own.  Every edge
    cell ends up in exactly one polyline.
    """
    cells = [tuple(c) for c in np.asarray(edges.cells).tolist()]
    where = {c: i for i, c in enumerate(cells)}
    visited = [False] * len(cells)
    lat_rad, lon_rad = edges.lat_rad, edges.lon_rad

    def walk(i: int) -> list[int]:
        path = []
        while True:
            r, c = cells[i]
            for dr, dc in _STEPS:
                j = where.get((r + dr, c + dc))
                if j is not None and not visited[j]:
                    visited[j] = True
                    path.append(j)
                    i = j
                    break
            else:
                return path

    out = []
    for i in range(len(cells)):
        if visited[i]:
            continue
        visited[i] = True
        forward = walk(i)
        backward = walk(i)
        order = np.array(backward[::-1] + [i] + forward, dtype=np.int64)
        out.append(CoastPolyline(edges.tile, lat_rad[order], lon_rad[order]))
    return out


@dataclass(eq=False)
class GeneratorSet:
    """Retained coastal points in radians, each tagged with its tile.

    ``polyline`` and ``vertex`` record where each generator came from; they are
    kept in memory for auditing and are not part of the file format.
    """

    lat: np.ndarray
    lon: np.ndarray
    tiles: np.ndarray  # (n, 2) int16 lat_floor, lon_floor
    max_gap_m: float = DEFAULT_MAX_GAP_M
    polyline: np.ndarray | None = field(default=None, repr=False)
    vertex: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.lat)

    @property
    def generators(self) -> list[tuple[GeoPoint, TileId]]:
        return [
            (GeoPoint.from_radians(a, b), TileId(t0, t1))
            for a, b, (t0, t1) in zip(self.lat.tolist(), self.lon.tolist(), self.tiles.tolist())
        ]

    def tile(self, i: int) -> TileId:
        t = self.tiles[i]
        return TileId(int(t[0]), int(t[1]))

    def __eq__(self, other):
        if not isinstance(other, GeneratorSet):
            return NotImplemented
        return serialize_generators(self) == serialize_generators(other)


def downsample(polylines: list[CoastPolyline], max_gap_m: float = DEFAULT_MAX_GAP_M) -> GeneratorSet:
    """Greedy arc-length thinning of every polyline.

    The first and last vertex of each polyline are kept; in between, a vertex
    is kept exactly when dropping it would stretch the arc from the previous
    kept vertex to the next candidate beyond ``max_gap_m``.
    """
    if not max_gap_m > 0:
        raise InvalidParameter(f"max_gap_m must be positive, got {max_gap_m}")
    lats, lons, tiles, pl_ids, vx_ids = [], [], [], [], []
    for p, line in enumerate(polylines):
        k = len(line)
        if k == 0:
            continue
        cum = np.concatenate([[0.0], np.cumsum(line.step_lengths_m())])
        keep = [0]
        last = 0
        while last < k - 1:
            # farthest vertex still within reach of the last kept one
            j = int(np.searchsorted(cum, cum[last] + max_gap_m, side="right")) - 1
            if j >= k - 1:
                break
            j = max(j, last + 1)
            keep.append(j)
            last = j
        if keep[-1] != k - 1:
            keep.append(k - 1)
        keep = np.asarray(keep, dtype=np.int64)
        lats.append(line.lat[keep])
        lons.append(line.lon[keep])
        tiles.append(np.tile(np.asarray(line.tile, dtype=np.int16), (len(keep), 1)))
        pl_ids.append(np.full(len(keep), p, dtype=np.int64))
        vx_ids.append(keep)
    if not lats:
        empty = np.empty(0)
        return GeneratorSet(empty, empty, np.empty((0, 2), np.int16), max_gap_m, np.empty(0, np.int64), np.empty(0, np.int64))
    return GeneratorSet(
        np.concatenate(lats),
        np.concatenate(lons),
        np.concatenate(tiles),
        float(max_gap_m),
        np.concatenate(pl_ids),
        np.concatenate(vx_ids),
    )


def audit_downsampling(polylines: list[CoastPolyline], gens: GeneratorSet, tol_m: float = 1e-6) -> list[str]:
    """Check both thinning constraints by rescanning the input polylines.

    Returns human-readable violations; empty means every polyline is
    represented, kept neighbours are at most ``max_gap_m`` apart along the
    line (a single input segment longer than the gap is exempt, since no
    thinning can shorten it) and every dropped vertex is within ``max_gap_m``
    of a kept vertex.
    """
    problems = []
    kept: dict[int, list[int]] = {}
    for p, v in zip(gens.polyline.tolist(), gens.vertex.tolist()):
        kept.setdefault(p, []).append(v)
    for p, line in enumerate(polylines):
        if len(line) == 0:
            continue
        ks = sorted(kept.get(p, []))
        if not ks:
            problems.append(f"polyline {p} ({tuple(line.tile)}) has no generator")
            continue
        steps = line.step_lengths_m().tolist()
        for a, b in zip(ks, ks[1:]):
            arc = 0.0
            for s in steps[a:b]:
                arc += s
            if arc > gens.max_gap_m + tol_m and b - a > 1:
                problems.append(f"polyline {p}: gap {arc:.3f} m between vertices {a} and {b}")
        kept_set = set(ks)
        for v in range(len(line)):
            if v in kept_set:
                continue
            d = haversine_angle(line.lat[v], line.lon[v], line.lat[ks], line.lon[ks]).min() * EARTH_RADIUS_M
            if d > gens.max_gap_m + tol_m:
                problems.append(f"polyline {p}: dropped vertex {v} is {d:.3f} m from every generator")
    return problems


def polylines_for(edge_sets) -> list[CoastPolyline]:
    """Chain every tile's edge cells, tiles taken in sorted order."""
    out = []
    for edges in sorted(edge_sets, key=lambda e: e.tile):
        out.extend(chain_edges(edges))
    return out


class Router:
    """Nearest-generator point location; immutable and thread-safe."""

    def __init__(self, gens: GeneratorSet, leaf_size: int = 32):
        if len(gens) == 0:
            raise InvalidParameter("cannot build a router without generators")
        self.generators = gens
        self.index: CoastTree = build_tree_radians(TileId(0, 0), gens.lat, gens.lon, leaf_size)
        # tree position -> generator index
        self._gen_of = self.index.order
        distinct = {t: TileId(*t) for t in map(tuple, np.unique(gens.tiles, axis=0).tolist())}
        self._tiles = [distinct[t] for t in map(tuple, gens.tiles.tolist())]

    def __len__(self) -> int:
        return len(self.generators)

    def nearest_generator_angle(self, qlat: float, qlon: float) -> tuple[float, int]:
        """(central angle, generator index) of the nearest generator; ties -> lowest index."""
        best, _ = self.index.nearest_angle(qlat, qlon)
        tied = self.index.within_angle(qlat, qlon, best)
        return best, int(self._gen_of[tied].min())

    def route(self, q: GeoPoint) -> TileId:
        _, g = self.nearest_generator_angle(*q.radians)
        return self._tiles[g]

    def tiles_within_angle(self, qlat: float, qlon: float, radius: float) -> list[TileId]:
        idx = self.index.within_angle(qlat, qlon, radius)
        return sorted({self._tiles[g] for g in self._gen_of[idx].tolist()})

    def route_k(self, q: GeoPoint, bound_m: float) -> list[TileId]:
        if bound_m < 0:
            raise InvalidParameter(f"bound_m must be >= 0, got {bound_m}")
        return self.tiles_within_angle(*q.radians, min(bound_m / EARTH_RADIUS_M, math.pi))


def build_router(gens: GeneratorSet) -> Router:
    return Router(gens)


def route(r: Router, q: GeoPoint) -> TileId:
    return r.route(q)


def route_k(r: Router, q: GeoPoint, bound_m: float) -> list[TileId]:
    return r.route_k(q, bound_m)


def voronoi_cells(gens: GeneratorSet, max_generators: int = 2000, seed: int = 0):
    """Explicit spherical Voronoi diagram of (a subset of) the generators, for plotting."""
    from scipy.spatial import SphericalVoronoi

    n = len(gens)
    idx = np.arange(n)
    if n > max_generators:
        idx = np.sort(np.random.default_rng(seed).choice(n, max_generators, replace=False))
    lat, lon = gens.lat[idx], gens.lon[idx]
    xyz = np.column_stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])
    xyz = np.unique(np.round(xyz, 12), axis=0)
    sv = SphericalVoronoi(xyz, radius=1.0, threshold=1e-9)
    sv.sort_vertices_of_regions()
    return sv


# -- serialization --------------------------------------------------------------


def serialize_generators(gens: GeneratorSet) -> bytes:
    rec = np.zeros(len(gens), dtype=RECORD_DTYPE)
    rec["lat"] = gens.lat
    rec["lon"] = gens.lon
    if len(gens):
        rec["lat_floor"] = gens.tiles[:, 0]
        rec["lon_floor"] = gens.tiles[:, 1]
    body = HEADER.pack(MAGIC, VERSION, len(gens)) + rec.tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def deserialize_generators(data: bytes, max_gap_m: float = DEFAULT_MAX_GAP_M) -> GeneratorSet:
    buf = memoryview(data)
    if len(buf) < HEADER.size + 4:
        raise TruncatedPayload(f"{len(buf)} bytes is shorter than the generator header")
    magic, version, count = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatch(f"generator format version {version}, expected {VERSION}")
    size = HEADER.size + RECORD_DTYPE.itemsize * count + 4
    if len(buf) < size:
        raise TruncatedPayload(f"generator payload is {len(buf)} bytes, header implies {size}")
    if len(buf) > size:
        raise FormatError(f"{len(buf) - size} trailing bytes after generator payload")
    (stored,) = struct.unpack_from("<I", buf, size - 4)
    if zlib.crc32(buf[: size - 4]) != stored:
        raise ChecksumMismatch("generator checksum mismatch")
    rec = np.frombuffer(buf, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)
    tiles = np.column_stack([rec["lat_floor"], rec["lon_floor"]]).astype(np.int16)
    return GeneratorSet(rec["lat"].copy(), rec["lon"].copy(), tiles.reshape(-1, 2), float(max_gap_m))
