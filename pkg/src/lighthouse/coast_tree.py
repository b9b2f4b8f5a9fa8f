"""Ball trees over coastal points under the great-circle metric.

Nodes live in a flat structured array in preorder (root is node 0) and the
point array is permuted so that every node owns a contiguous range
``[start, end)``.  This makes the on-disk image a plain dump of two arrays:
no compression, no per-element parsing on load.

Binary layout (little-endian)::

    magic "LHBT" | version u16 | reserved u16 | lat_floor i16 | lon_floor i16
    | n_points u64 | n_nodes u64 | leaf_size u32
    | points  n_points x (lat f64, lon f64)            radians
    | nodes   n_nodes  x (lat f64, lon f64, radius f64, start u64, end u64,
                          left u32, right u32)           48 bytes each
    | crc32 u32 of everything above

A tile whose tree is empty is stored as the header with zero counts.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    ChecksumMismatch,
    EmptyTree,
    FormatError,
    IndexOutOfBounds,
    InvalidParameter,
    TruncatedPayload,
    VersionMismatch,
)
from .geo import EARTH_RADIUS_M, GeoPoint, TileId, haversine_angle

MAGIC = b"LHBT"
VERSION = 1
LEAF = 0xFFFFFFFF
DEFAULT_LEAF_SIZE = 32

HEADER = struct.Struct("<4sHHhhQQI")
NODE_DTYPE = np.dtype(
    [
        ("lat", "<f8"),
        ("lon", "<f8"),
        ("radius", "<f8"),
        ("start", "<u8"),
        ("end", "<u8"),
        ("left", "<u4"),
        ("right", "<u4"),
    ]
)
assert HEADER.size == 32 and NODE_DTYPE.itemsize == 48

# slack on pruning comparisons, radians (about 6 micrometres)
_PRUNE_EPS = 1e-12


def _angle(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    # scalar haversine for pruning bounds only; ranking always uses haversine_angle
    s1 = math.sin((lat2 - lat1) * 0.5)
    s2 = math.sin((lon2 - lon1) * 0.5)
    a = s1 * s1 + math.cos(lat1) * math.cos(lat2) * s2 * s2
    return 2.0 * math.asin(math.sqrt(min(a, 1.0)))


@dataclass(frozen=True)
class NearestHit:
    point: GeoPoint
    distance_m: float
    index: int


class CoastTree:
    """Immutable ball tree; ``nearest`` is safe to call from many threads."""

    def __init__(self, tile: TileId, lat: np.ndarray, lon: np.ndarray, nodes: np.ndarray, leaf_size: int):
        self.tile = TileId(int(tile[0]), int(tile[1]))
        self.lat = np.ascontiguousarray(lat, dtype=np.float64)
        self.lon = np.ascontiguousarray(lon, dtype=np.float64)
        self.nodes = np.ascontiguousarray(nodes, dtype=NODE_DTYPE)
        self.leaf_size = int(leaf_size)
        n = self.nodes
        # python lists make the per-node work in the search loop cheap
        self._clat = n["lat"].tolist()
        self._clon = n["lon"].tolist()
        self._rad = n["radius"].tolist()
        self._start = n["start"].tolist()
        self._end = n["end"].tolist()
        self._left = n["left"].tolist()
        self._right = n["right"].tolist()

    @classmethod
    def empty(cls, tile: TileId, leaf_size: int = DEFAULT_LEAF_SIZE) -> "CoastTree":
        return cls(tile, np.empty(0), np.empty(0), np.empty(0, dtype=NODE_DTYPE), leaf_size)

    def __len__(self) -> int:
        return len(self.lat)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def __eq__(self, other):
        if not isinstance(other, CoastTree):
            return NotImplemented
        return serialize_tree(self) == serialize_tree(other)

    def __hash__(self):
        return hash((self.tile, len(self)))

    def height(self) -> int:
        if not len(self.nodes):
            return 0
        depth, stack = 0, [(0, 1)]
        while stack:
            i, d = stack.pop()
            depth = max(depth, d)
            if self._left[i] != LEAF:
                stack.append((self._left[i], d + 1))
                stack.append((self._right[i], d + 1))
        return depth

    def point(self, index: int) -> GeoPoint:
        return GeoPoint.from_radians(self.lat[index], self.lon[index])

    # -- queries ------------------------------------------------------------

    def nearest_angle(self, qlat: float, qlon: float) -> tuple[float, int]:
        """Smallest central angle from a query in radians, and its point index.

        Exact branch-and-bound; among equal distances the lowest index wins.
        """
        if not len(self.lat):
            raise EmptyTree(f"tree for tile {tuple(self.tile)} has no points")
        clat, clon, rad = self._clat, self._clon, self._rad
        start, end, left, right = self._start, self._end, self._left, self._right
        lat, lon = self.lat, self.lon
        best, best_i = math.inf, -1
        stack = [(max(_angle(qlat, qlon, clat[0], clon[0]) - rad[0], 0.0), 0)]
        while stack:
            lb, i = stack.pop()
            if lb > best + _PRUNE_EPS:
                continue
            li = left[i]
            if li == LEAF:
                s, e = start[i], end[i]
                d = haversine_angle(qlat, qlon, lat[s:e], lon[s:e])
                j = int(np.argmin(d))
                dj = float(d[j])
                if dj < best or (dj == best and s + j < best_i):
                    best, best_i = dj, s + j
                continue
            ri = right[i]
            lbl = _angle(qlat, qlon, clat[li], clon[li]) - rad[li]
            lbr = _angle(qlat, qlon, clat[ri], clon[ri]) - rad[ri]
            lbl = lbl if lbl > 0.0 else 0.0
            lbr = lbr if lbr > 0.0 else 0.0
            # nearer child is popped first
            if lbl <= lbr:
                stack.append((lbr, ri))
                stack.append((lbl, li))
            else:
                stack.append((lbl, li))
                stack.append((lbr, ri))
        return best, best_i

    def nearest(self, q: GeoPoint) -> NearestHit:
        qlat, qlon = q.radians
        angle, idx = self.nearest_angle(qlat, qlon)
        return NearestHit(self.point(idx), angle * EARTH_RADIUS_M, idx)

    def within_angle(self, qlat: float, qlon: float, radius: float) -> np.ndarray:
        """Sorted indices of every point whose central angle to the query is <= ``radius``."""
        if not len(self.lat):
            return np.empty(0, dtype=np.int64)
        clat, clon, rad = self._clat, self._clon, self._rad
        out = []
        stack = [0]
        while stack:
            i = stack.pop()
            if _angle(qlat, qlon, clat[i], clon[i]) - rad[i] > radius + _PRUNE_EPS:
                continue
            if self._left[i] == LEAF:
                s, e = self._start[i], self._end[i]
                d = haversine_angle(qlat, qlon, self.lat[s:e], self.lon[s:e])
                out.append(np.nonzero(d <= radius)[0] + s)
            else:
                stack.append(self._right[i])
                stack.append(self._left[i])
        if not out:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(out))


def nearest(tree: CoastTree, q: GeoPoint) -> NearestHit:
    return tree.nearest(q)


# -- construction -------------------------------------------------------------


def _unit(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    c = np.cos(lat)
    return np.column_stack([c * np.cos(lon), c * np.sin(lon), np.sin(lat)])


def build_tree_radians(tile: TileId, lat: np.ndarray, lon: np.ndarray, leaf_size: int = DEFAULT_LEAF_SIZE) -> CoastTree:
    """Build a tree over points given in radians (input order breaks ties)."""
    if leaf_size < 1:
        raise InvalidParameter(f"leaf_size must be >= 1, got {leaf_size}")
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    n = len(lat)
    if n == 0:
        raise EmptyTree(f"no edge points for tile {tuple(tile)}")
    xyz = _unit(lat, lon)
    perm = np.arange(n)
    records: list[list] = []

    def build(s: int, e: int) -> int:
        node = len(records)
        rec = [0.0, 0.0, 0.0, s, e, LEAF, LEAF]
        records.append(rec)
        idx = perm[s:e]
        v = xyz[idx].sum(axis=0)
        norm = math.sqrt(float(v @ v))
        if norm < 1e-12:
            v, norm = xyz[idx[0]], 1.0
        if e - s == 1:
            clat, clon = float(lat[idx[0]]), float(lon[idx[0]])
        else:
            cx, cy, cz = (v / norm).tolist()
            clat = math.atan2(cz, math.hypot(cx, cy))
            clon = math.atan2(cy, cx)
        radius = float(haversine_angle(clat, clon, lat[idx], lon[idx]).max())
        rec[0], rec[1], rec[2] = clat, clon, radius
        if e - s <= leaf_size:
            return node
        east = np.array([-math.sin(clon), math.cos(clon), 0.0])
        north = np.array([-math.sin(clat) * math.cos(clon), -math.sin(clat) * math.sin(clon), math.cos(clat)])
        pts = xyz[idx]
        u, w = pts @ east, pts @ north
        coord = u if np.ptp(u) >= np.ptp(w) else w
        perm[s:e] = idx[np.lexsort((idx, coord))]
        mid = s + (e - s + 1) // 2
        rec[5] = build(s, mid)
        rec[6] = build(mid, e)
        return node

    build(0, n)
    nodes = np.array([tuple(r) for r in records], dtype=NODE_DTYPE)
    tree = CoastTree(tile, lat[perm], lon[perm], nodes, leaf_size)
    tree.order = perm  # input index of each tree point; not serialized
    return tree


def build_tree(edges, leaf_size: int = DEFAULT_LEAF_SIZE) -> CoastTree:
    """Build a tree over an :class:`~lighthouse.ingest.EdgeSet`."""
    return build_tree_radians(edges.tile, edges.lat_rad, edges.lon_rad, leaf_size)


def audit_tree(tree: CoastTree) -> list[str]:
    """Structural and ball-property violations; an empty list means the tree is sound."""
    problems = []
    n, m = len(tree.lat), len(tree.nodes)
    if n == 0:
        return [] if m == 0 else ["empty tree has nodes"]
    if m == 0:
        return ["non-empty tree has no nodes"]
    covered = np.zeros(n, dtype=np.int64)
    seen = set()
    stack = [(0, 0, n)]
    while stack:
        i, s_exp, e_exp = stack.pop()
        if i in seen or not 0 <= i < m:
            problems.append(f"node {i} reached twice or out of range")
            continue
        seen.add(i)
        rec = tree.nodes[i]
        s, e = int(rec["start"]), int(rec["end"])
        if (s, e) != (s_exp, e_exp) or not 0 <= s < e <= n:
            problems.append(f"node {i}: range [{s},{e}) expected [{s_exp},{e_exp})")
            continue
        d = haversine_angle(rec["lat"], rec["lon"], tree.lat[s:e], tree.lon[s:e])
        if not np.all(d <= rec["radius"]):
            problems.append(f"node {i}: point outside ball (max {d.max()!r} > {rec['radius']!r})")
        left, right = int(rec["left"]), int(rec["right"])
        if left == LEAF and right == LEAF:
            covered[s:e] += 1
        elif left == LEAF or right == LEAF:
            problems.append(f"node {i}: exactly one child is a leaf marker")
        else:
            mid = int(tree.nodes[left]["end"]) if 0 <= left < m else s
            stack.append((right, mid, e))
            stack.append((left, s, mid))
    if len(seen) != m:
        problems.append(f"{m - len(seen)} unreachable nodes")
    if not np.all(covered == 1):
        problems.append("leaf ranges do not partition the point array")
    return problems


# -- serialization --------------------------------------------------------------


def serialize_tree(t: CoastTree) -> bytes:
    header = HEADER.pack(MAGIC, VERSION, 0, t.tile.lat_floor, t.tile.lon_floor, len(t.lat), len(t.nodes), t.leaf_size)
    points = np.column_stack([t.lat, t.lon]).astype("<f8") if len(t.lat) else np.empty((0, 2), "<f8")
    body = header + points.tobytes() + t.nodes.astype(NODE_DTYPE).tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def expected_tree_size(n_points: int, n_nodes: int) -> int:
    return HEADER.size + 16 * n_points + NODE_DTYPE.itemsize * n_nodes + 4


def deserialize_tree(data: bytes) -> CoastTree:
    buf = memoryview(data)
    if len(buf) < HEADER.size + 4:
        raise TruncatedPayload(f"{len(buf)} bytes is shorter than the tree header")
    magic, version, _reserved, lat_floor, lon_floor, n, m, leaf_size = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatch(f"tree format version {version}, expected {VERSION}")
    size = expected_tree_size(n, m)
    if len(buf) < size:
        raise TruncatedPayload(f"tree payload is {len(buf)} bytes, header implies {size}")
    if len(buf) > size:
        raise FormatError(f"{len(buf) - size} trailing bytes after tree payload")
    (stored,) = struct.unpack_from("<I", buf, size - 4)
    if zlib.crc32(buf[: size - 4]) != stored:
        raise ChecksumMismatch("tree checksum mismatch")
    pts = np.frombuffer(buf, dtype="<f8", count=2 * n, offset=HEADER.size).reshape(n, 2)
    nodes = np.frombuffer(buf, dtype=NODE_DTYPE, count=m, offset=HEADER.size + 16 * n)
    if n == 0:
        if m:
            raise IndexOutOfBounds("empty tree declares nodes")
    else:
        if m == 0:
            raise IndexOutOfBounds("non-empty tree declares no nodes")
        leaf = nodes["left"] == LEAF
        bad = (
            (nodes["start"] >= nodes["end"])
            | (nodes["end"] > n)
            | (leaf != (nodes["right"] == LEAF))
            | (~leaf & ((nodes["left"] >= m) | (nodes["right"] >= m)))
            | ~np.isfinite(nodes["radius"])
            | (nodes["radius"] < 0)
        )
        if bad.any():
            raise IndexOutOfBounds(f"node {int(np.argmax(bad))} has out-of-range fields")
        if not np.isfinite(pts).all():
            raise FormatError("non-finite point coordinates")
    return CoastTree(TileId(lat_floor, lon_floor), pts[:, 0], pts[:, 1], nodes.copy(), leaf_size)
