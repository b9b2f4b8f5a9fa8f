"""Per-tile land/water rasters and their coastal edge cells.

A tile's class raster (either read from a labelled source or rasterized from
land polygons) is binarized into water vs. everything else, run through a 3x3
Sobel operator, and every cell with a nonzero gradient becomes a coastal edge
point located at the cell center.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import ndimage

from .errors import DegenerateRing, DimensionMismatch, InvalidParameter, NotALandTile, OutOfRange
from .geo import GeoPoint, TileId, check_tile

WATER = 0
LAND = 1

#: Default cells per tile side (about 30 m at the equator).
DEFAULT_GRID = 3600


@dataclass(frozen=True)
class ClassLabel:
    code: int

    def __post_init__(self):
        if not 0 <= int(self.code) <= 255:
            raise InvalidParameter(f"class code {self.code} outside 0..255")

    @property
    def is_water(self) -> bool:
        return self.code == WATER

    @property
    def name(self) -> str:
        if self.code == WATER:
            return "water"
        if self.code == LAND:
            return "land"
        return f"class_{self.code}"


@dataclass(eq=False)
class RasterTile:
    """Class codes for one tile, row 0 at the north edge, col 0 at the west edge."""

    tile: TileId
    classes: np.ndarray

    def __post_init__(self):
        self.tile = check_tile(TileId(*self.tile))
        classes = np.ascontiguousarray(self.classes, dtype=np.uint8)
        if classes.ndim != 2:
            raise DimensionMismatch(f"class grid must be 2-D, got shape {classes.shape}")
        if classes.shape[0] < 2 or classes.shape[1] < 2:
            raise DimensionMismatch(f"class grid {classes.shape} smaller than 2x2")
        self.classes = classes

    @property
    def n_rows(self) -> int:
        return self.classes.shape[0]

    @property
    def n_cols(self) -> int:
        return self.classes.shape[1]

    def __eq__(self, other):
        if not isinstance(other, RasterTile):
            return NotImplemented
        return self.tile == other.tile and np.array_equal(self.classes, other.classes)


@dataclass(eq=False)
class BitMask:
    tile: TileId
    bits: np.ndarray  # True = water

    @property
    def n_rows(self) -> int:
        return self.bits.shape[0]

    @property
    def n_cols(self) -> int:
        return self.bits.shape[1]


@dataclass(eq=False)
class EdgeSet:
    """Coastal edge cells of one tile and their cell-center coordinates (degrees)."""

    tile: TileId
    n_rows: int
    n_cols: int
    cells: np.ndarray  # (n, 2) int64 (row, col), sorted, unique
    lat: np.ndarray = field(repr=False)
    lon: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def points(self) -> list[GeoPoint]:
        return [GeoPoint(a, b) for a, b in zip(self.lat.tolist(), self.lon.tolist())]

    @property
    def lat_rad(self) -> np.ndarray:
        return np.radians(self.lat)

    @property
    def lon_rad(self) -> np.ndarray:
        return np.radians(self.lon)


@dataclass
class LandPolygonSet:
    """Closed rings of (lat, lon) vertices.

    Outer rings run counterclockwise and holes clockwise by convention, but
    rasterization uses the even-odd rule over all rings, so orientation does
    not change the result.  Rings must not cross the antimeridian.
    """

    rings: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        closed = []
        for ring in self.rings:
            arr = np.asarray(ring, dtype=np.float64).reshape(-1, 2)
            if len(arr) and not np.array_equal(arr[0], arr[-1]):
                arr = np.vstack([arr, arr[:1]])
            closed.append(arr)
        self.rings = closed

    def __len__(self) -> int:
        return len(self.rings)


def validate_ring(ring: np.ndarray, index: int) -> None:
    distinct = np.unique(ring[:-1], axis=0)
    if len(distinct) < 3:
        raise DegenerateRing(index, f"{len(distinct)} distinct vertices, need at least 3")
    rel = distinct[1:] - distinct[0]
    cross = rel[0, 0] * rel[:, 1] - rel[0, 1] * rel[:, 0]
    if not np.any(cross != 0):
        raise DegenerateRing(index, "all vertices are collinear")


def _check_dims(n_rows: int, n_cols: int) -> None:
    if n_rows < 2 or n_cols < 2:
        raise InvalidParameter(f"grid {n_rows}x{n_cols} is smaller than 2x2")


def cell_center_lats(tile: TileId, n_rows: int) -> np.ndarray:
    rows = np.arange(n_rows)
    return tile.lat_floor + 1 - (rows + 0.5) / n_rows


def cell_center_lons(tile: TileId, n_cols: int) -> np.ndarray:
    cols = np.arange(n_cols)
    return tile.lon_floor + (cols + 0.5) / n_cols


def rasterize_polygons(polys: LandPolygonSet, tile: TileId, n_rows: int, n_cols: int) -> RasterTile:
    """Label each cell Land when its center has odd crossing parity over all rings."""
    tile = check_tile(TileId(*tile))
    _check_dims(n_rows, n_cols)
    for i, ring in enumerate(polys.rings):
        validate_ring(ring, i)

    lats = cell_center_lats(tile, n_rows)  # descending
    lons = cell_center_lons(tile, n_cols)  # ascending
    # crossings[r, k] counts edges whose intersection leaves exactly k centers to its west
    crossings = np.zeros((n_rows, n_cols + 1), dtype=np.int64)
    lat_lo, lat_hi = tile.lat_floor, tile.lat_floor + 1
    lon_lo = tile.lon_floor
    for ring in polys.rings:
        ys, xs = ring[:, 0], ring[:, 1]
        if ys.max() < lat_lo or ys.min() > lat_hi or xs.max() < lon_lo or xs.min() > lon_lo + 1:
            continue
        for j in range(len(ring) - 1):
            y0, x0, y1, x1 = ys[j], xs[j], ys[j + 1], xs[j + 1]
            if y0 == y1:
                continue
            rows = np.nonzero((y0 > lats) != (y1 > lats))[0]
            if rows.size == 0:
                continue
            py = lats[rows]
            xint = (x1 - x0) * (py - y0) / (y1 - y0) + x0
            k = np.searchsorted(lons, xint, side="left")
            np.add.at(crossings, (rows, k), 1)
    # a center at column c lies west of every crossing with k > c
    west_of = np.cumsum(crossings[:, ::-1], axis=1)[:, ::-1][:, 1:]
    classes = np.where(west_of % 2 == 1, LAND, WATER).astype(np.uint8)
    return RasterTile(tile, classes)


def binarize(r: RasterTile) -> BitMask:
    return BitMask(r.tile, r.classes == WATER)


def sobel_edges(m: BitMask) -> np.ndarray:
    """Cells with nonzero 3x3 Sobel gradient magnitude, replicate-padded.

    Returns an ``(n, 2)`` array of ``(row, col)`` sorted row-major.
    """
    if m.n_rows < 2 or m.n_cols < 2:
        raise InvalidParameter(f"mask {m.bits.shape} is smaller than 2x2")
    img = m.bits.astype(np.int32)
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    edge = (gx * gx + gy * gy) > 0
    return np.argwhere(edge).astype(np.int64)


def pixel_center_geo(tile: TileId, row: int, col: int, n_rows: int, n_cols: int) -> GeoPoint:
    if not (0 <= row < n_rows and 0 <= col < n_cols):
        raise OutOfRange(f"cell ({row}, {col}) outside {n_rows}x{n_cols} grid")
    return GeoPoint(tile.lat_floor + 1 - (row + 0.5) / n_rows, tile.lon_floor + (col + 0.5) / n_cols)


def pixel_centers(tile: TileId, cells: np.ndarray, n_rows: int, n_cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`pixel_center_geo` for an ``(n, 2)`` array of cells."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    lat = tile.lat_floor + 1 - (cells[:, 0] + 0.5) / n_rows
    lon = tile.lon_floor + (cells[:, 1] + 0.5) / n_cols
    return lat, lon


def cell_of(tile: TileId, p: GeoPoint, n_rows: int, n_cols: int) -> tuple[int, int]:
    """The (row, col) of the cell in ``tile`` containing ``p``."""
    row = int(math.floor((tile.lat_floor + 1 - p.lat) * n_rows))
    col = int(math.floor((p.lon - tile.lon_floor) * n_cols))
    return min(max(row, 0), n_rows - 1), min(max(col, 0), n_cols - 1)


def edge_set(tile: TileId, cells: np.ndarray, n_rows: int, n_cols: int) -> EdgeSet:
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    lat, lon = pixel_centers(tile, cells, n_rows, n_cols)
    return EdgeSet(tile, n_rows, n_cols, cells, lat, lon)


def build_tile(source: RasterTile) -> tuple[EdgeSet, BitMask]:
    """Edge points and water mask for one land-bearing tile."""
    mask = binarize(source)
    if mask.bits.all():
        raise NotALandTile(f"tile {tuple(source.tile)} contains no land")
    cells = sobel_edges(mask)
    return edge_set(source.tile, cells, source.n_rows, source.n_cols), mask


# -- source readers -----------------------------------------------------------


def resample_nearest(r: RasterTile, n_rows: int, n_cols: int) -> RasterTile:
    """Nearest-neighbour resample of a raster onto an ``n_rows x n_cols`` grid."""
    if (r.n_rows, r.n_cols) == (n_rows, n_cols):
        return r
    _check_dims(n_rows, n_cols)
    ri = ((np.arange(n_rows) + 0.5) * r.n_rows / n_rows).astype(np.int64)
    ci = ((np.arange(n_cols) + 0.5) * r.n_cols / n_cols).astype(np.int64)
    return RasterTile(r.tile, r.classes[np.ix_(ri, ci)])


def read_image_source(path: str | Path) -> tuple[RasterTile, str]:
    """Read a one-byte-per-cell grayscale image plus its ``.json`` sidecar.

    The sidecar names ``lat_floor``, ``lon_floor``, ``n_rows``, ``n_cols`` and
    optionally a ``source`` tag.
    """
    from PIL import Image

    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    with Image.open(path) as img:
        if img.mode not in ("L", "P"):
            raise DimensionMismatch(f"{path}: expected 8-bit grayscale, got mode {img.mode}")
        classes = np.asarray(img, dtype=np.uint8)
    expected = (int(meta["n_rows"]), int(meta["n_cols"]))
    if classes.shape != expected:
        raise DimensionMismatch(f"{path}: image is {classes.shape}, sidecar says {expected}")
    tile = TileId(int(meta["lat_floor"]), int(meta["lon_floor"]))
    return RasterTile(tile, classes), str(meta.get("source", "esa"))


def write_image_source(r: RasterTile, path: str | Path, source: str = "esa") -> None:
    from PIL import Image

    path = Path(path)
    Image.fromarray(r.classes, mode="L").save(path)
    meta = {
        "lat_floor": r.tile.lat_floor,
        "lon_floor": r.tile.lon_floor,
        "n_rows": r.n_rows,
        "n_cols": r.n_cols,
        "source": source,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")


def parse_rings(lines: Iterable[str]) -> LandPolygonSet:
    """Parse one ring per line of comma-separated ``"lat lon"`` pairs."""
    rings = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            pts = [tuple(float(v) for v in pair.split()) for pair in line.split(",")]
        except ValueError as exc:
            raise InvalidParameter(f"line {lineno}: {exc}") from None
        if any(len(p) != 2 for p in pts):
            raise InvalidParameter(f"line {lineno}: every vertex needs exactly 'lat lon'")
        rings.append(np.array(pts, dtype=np.float64))
    return LandPolygonSet(rings)


def format_rings(polys: LandPolygonSet) -> str:
    return "".join(", ".join(f"{lat!r} {lon!r}" for lat, lon in ring.tolist()) + "\n" for ring in polys.rings)


def read_ring_file(path: str | Path) -> LandPolygonSet:
    with open(path, encoding="utf-8") as fh:
        return parse_rings(fh)


def tiles_touched(polys: LandPolygonSet) -> list[TileId]:
    """Every tile whose extent overlaps the bounding box of some ring."""
    out = set()
    for ring in polys.rings:
        lat0, lon0 = np.floor(ring.min(axis=0)).astype(int)
        lat1, lon1 = np.floor(ring.max(axis=0)).astype(int)
        for la in range(max(lat0, -90), min(lat1, 89) + 1):
            for lo in range(max(lon0, -180), min(lon1, 179) + 1):
                out.add(TileId(int(la), int(lo)))
    return sorted(out)
