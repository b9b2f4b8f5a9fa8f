"""On-disk dataset layout.

A dataset directory holds::

    lighthouse.manifest      JSON inventory (human-readable, diffable)
    generators.lhvg          router generators
    trees/<tile>.lhbt        one uncompressed ball tree per tile
    rasters/<tile>.lhrc      one chunked class raster per tile

Chunked raster layout (little-endian)::

    magic "LHRC" | version u16 | lat_floor i16 | lon_floor i16
    | n_rows u32 | n_cols u32 | chunk_size u32 | chunk_count u32
    | offsets   chunk_count x u64
    | payloads  square chunks in row-major chunk order, row-major bytes inside
    | chunk crc32 table  chunk_count x u32
    | file crc32 u32 of everything above

Nothing is compressed.  A single cell is read with one positioned read into
one chunk; the header, offset table and chunk checksum table are read once
when a raster is opened.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .coast_tree import DEFAULT_LEAF_SIZE, CoastTree, build_tree, deserialize_tree, serialize_tree
from .errors import (
    BadMagic,
    ChecksumMismatch,
    DimensionMismatch,
    DuplicateTile,
    FormatError,
    ManifestError,
    MissingFile,
    OutOfRange,
    TruncatedPayload,
    VersionMismatch,
)
from .geo import EARTH_RADIUS_M, TileId
from .ingest import ClassLabel, EdgeSet, RasterTile
from .router import GeneratorSet, deserialize_generators, serialize_generators

MANIFEST_NAME = "lighthouse.manifest"
MANIFEST_VERSION = 1
GENERATORS_NAME = "generators.lhvg"
DEFAULT_CHUNK_SIZE = 256

RASTER_MAGIC = b"LHRC"
RASTER_VERSION = 1
RASTER_HEADER = struct.Struct("<4sHhhIIII")


# -- chunked rasters -------------------------------------------------------------


def _chunk_grid(n_rows: int, n_cols: int, cs: int) -> tuple[int, int]:
    return -(-n_rows // cs), -(-n_cols // cs)


def serialize_raster(r: RasterTile, chunk_size: int = DEFAULT_CHUNK_SIZE) -> bytes:
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    crows, ccols = _chunk_grid(r.n_rows, r.n_cols, chunk_size)
    count = crows * ccols
    head = RASTER_HEADER.pack(RASTER_MAGIC, RASTER_VERSION, r.tile.lat_floor, r.tile.lon_floor, r.n_rows, r.n_cols, chunk_size, count)
    payloads = []
    for cr in range(crows):
        for cc in range(ccols):
            block = r.classes[cr * chunk_size : (cr + 1) * chunk_size, cc * chunk_size : (cc + 1) * chunk_size]
            payloads.append(np.ascontiguousarray(block).tobytes())
    offsets = np.zeros(count, dtype="<u8")
    pos = RASTER_HEADER.size + 8 * count
    for i, p in enumerate(payloads):
        offsets[i] = pos
        pos += len(p)
    crcs = np.array([zlib.crc32(p) for p in payloads], dtype="<u4")
    body = head + offsets.tobytes() + b"".join(payloads) + crcs.tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def _parse_raster_header(head: bytes):
    if len(head) < RASTER_HEADER.size:
        raise TruncatedPayload("raster shorter than its header")
    magic, version, lat_floor, lon_floor, n_rows, n_cols, cs, count = RASTER_HEADER.unpack_from(head, 0)
    if magic != RASTER_MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {RASTER_MAGIC!r}")
    if version != RASTER_VERSION:
        raise VersionMismatch(f"raster format version {version}, expected {RASTER_VERSION}")
    if n_rows < 2 or n_cols < 2 or cs < 1 or count != np.prod(_chunk_grid(n_rows, n_cols, cs)):
        raise FormatError(f"inconsistent raster header ({n_rows}x{n_cols}, chunk {cs}, {count} chunks)")
    return TileId(lat_floor, lon_floor), n_rows, n_cols, cs, count


def _raster_size(n_rows: int, n_cols: int, count: int) -> int:
    return RASTER_HEADER.size + 12 * count + n_rows * n_cols + 4


def deserialize_raster(data: bytes) -> RasterTile:
    """Decode a whole raster, verifying every checksum."""
    buf = memoryview(data)
    tile, n_rows, n_cols, cs, count = _parse_raster_header(buf)
    size = _raster_size(n_rows, n_cols, count)
    if len(buf) < size:
        raise TruncatedPayload(f"raster payload is {len(buf)} bytes, header implies {size}")
    if len(buf) > size:
        raise FormatError(f"{len(buf) - size} trailing bytes after raster payload")
    (stored,) = struct.unpack_from("<I", buf, size - 4)
    if zlib.crc32(buf[: size - 4]) != stored:
        raise ChecksumMismatch("raster file checksum mismatch")
    offsets = np.frombuffer(buf, dtype="<u8", count=count, offset=RASTER_HEADER.size)
    classes = np.empty((n_rows, n_cols), dtype=np.uint8)
    _, ccols = _chunk_grid(n_rows, n_cols, cs)
    for i, off in enumerate(offsets.tolist()):
        cr, cc = divmod(i, ccols)
        h = min(cs, n_rows - cr * cs)
        w = min(cs, n_cols - cc * cs)
        if off + h * w > size:
            raise FormatError(f"chunk {i} offset out of range")
        classes[cr * cs : cr * cs + h, cc * cs : cc * cs + w] = np.frombuffer(buf, np.uint8, h * w, off).reshape(h, w)
    return RasterTile(tile, classes)


class RasterHandle:
    """Open chunked raster supporting single-cell reads.

    ``bytes_read`` accounts for every byte fetched from the file, which is how
    tests observe that a cell read touches one chunk at most.  Safe for
    concurrent readers: all reads are positioned (``os.pread``).
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fd = os.open(self.path, os.O_RDONLY | getattr(os, "O_BINARY", 0))
        self.bytes_read = 0
        self._lock = threading.Lock()
        try:
            size = os.fstat(self._fd).st_size
            head = self._pread(0, RASTER_HEADER.size)
            self.tile, self.n_rows, self.n_cols, self.chunk_size, self.chunk_count = _parse_raster_header(head)
            expected = _raster_size(self.n_rows, self.n_cols, self.chunk_count)
            if size != expected:
                cls = TruncatedPayload if size < expected else FormatError
                raise cls(f"{self.path}: raster is {size} bytes, header implies {expected}")
            count = self.chunk_count
            self._offsets = np.frombuffer(self._pread(RASTER_HEADER.size, 8 * count), "<u8").tolist()
            self._crcs = np.frombuffer(self._pread(size - 4 - 4 * count, 4 * count), "<u4").tolist()
        except Exception:
            os.close(self._fd)
            raise
        self._ccols = _chunk_grid(self.n_rows, self.n_cols, self.chunk_size)[1]
        self._verified: set[int] = set()

    def _pread(self, offset: int, n: int) -> bytes:
        data = os.pread(self._fd, n, offset)
        if len(data) != n:
            raise TruncatedPayload(f"{self.path}: short read at offset {offset}")
        with self._lock:
            self.bytes_read += n
        return data

    @property
    def header_bytes(self) -> int:
        return RASTER_HEADER.size + 12 * self.chunk_count

    def read_code(self, row: int, col: int) -> int:
        if not (0 <= row < self.n_rows and 0 <= col < self.n_cols):
            raise OutOfRange(f"cell ({row}, {col}) outside {self.n_rows}x{self.n_cols} raster")
        cs = self.chunk_size
        cr, r = divmod(row, cs)
        cc, c = divmod(col, cs)
        i = cr * self._ccols + cc
        w = min(cs, self.n_cols - cc * cs)
        if i in self._verified:
            return self._pread(self._offsets[i] + r * w + c, 1)[0]
        h = min(cs, self.n_rows - cr * cs)
        chunk = self._pread(self._offsets[i], h * w)
        if zlib.crc32(chunk) != self._crcs[i]:
            raise ChecksumMismatch(f"{self.path}: chunk {i} checksum mismatch")
        self._verified.add(i)
        return chunk[r * w + c]

    def read_class(self, row: int, col: int) -> ClassLabel:
        return ClassLabel(self.read_code(row, col))

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def read_class(raster_file: str | Path, row: int, col: int) -> ClassLabel:
    with RasterHandle(raster_file) as h:
        return h.read_class(row, col)


# -- manifest ---------------------------------------------------------------------


@dataclass(frozen=True)
class TileEntry:
    tile: TileId
    tree_file: str
    raster_file: str
    source: str
    edge_points: int

    def to_json(self) -> dict:
        return {
            "tile": [self.tile.lat_floor, self.tile.lon_floor],
            "tree": self.tree_file,
            "raster": self.raster_file,
            "source": self.source,
            "edge_points": self.edge_points,
        }


@dataclass
class Manifest:
    root: Path
    n_rows: int
    n_cols: int
    max_gap_m: float
    generator_file: str
    tiles: list[TileEntry]
    radius_m: float = EARTH_RADIUS_M
    leaf_size: int = DEFAULT_LEAF_SIZE
    chunk_size: int = DEFAULT_CHUNK_SIZE
    format_version: int = MANIFEST_VERSION
    path: Path | None = None
    _by_tile: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self._by_tile = {}
        for e in self.tiles:
            if e.tile in self._by_tile:
                raise DuplicateTile(f"tile {tuple(e.tile)} listed twice")
            self._by_tile[e.tile] = e

    def __contains__(self, tile) -> bool:
        return tile in self._by_tile

    def entry(self, tile: TileId) -> TileEntry:
        return self._by_tile[tile]

    def tile_ids(self) -> list[TileId]:
        return [e.tile for e in self.tiles]

    def tree_path(self, tile: TileId) -> Path:
        return self.root / self._by_tile[tile].tree_file

    def raster_path(self, tile: TileId) -> Path:
        return self.root / self._by_tile[tile].raster_file

    @property
    def generator_path(self) -> Path:
        return self.root / self.generator_file

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "grid": {"n_rows": self.n_rows, "n_cols": self.n_cols},
            "radius_m": self.radius_m,
            "max_gap_m": self.max_gap_m,
            "leaf_size": self.leaf_size,
            "chunk_size": self.chunk_size,
            "generators": self.generator_file,
            "tiles": [e.to_json() for e in self.tiles],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def load_tree(self, tile: TileId) -> CoastTree:
        path = self.tree_path(tile)
        try:
            tree = deserialize_tree(path.read_bytes())
        except FormatError as exc:
            raise type(exc)(f"tile {tuple(tile)} ({path}): {exc}") from None
        if tree.tile != tile:
            raise FormatError(f"tile {tuple(tile)} ({path}): file holds tile {tuple(tree.tile)}")
        return tree

    def open_raster(self, tile: TileId) -> RasterHandle:
        h = RasterHandle(self.raster_path(tile))
        if h.tile != tile or (h.n_rows, h.n_cols) != (self.n_rows, self.n_cols):
            h.close()
            raise FormatError(f"tile {tuple(tile)}: raster header does not match the manifest")
        return h

    def load_generators(self) -> GeneratorSet:
        return deserialize_generators(self.generator_path.read_bytes(), self.max_gap_m)


def open_manifest(path: str | Path) -> Manifest:
    """Parse and validate a manifest; tile files are checked for existence only."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise MissingFile(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        version = int(doc["format_version"])
        if version != MANIFEST_VERSION:
            raise VersionMismatch(f"manifest version {version}, expected {MANIFEST_VERSION}")
        entries = [
            TileEntry(TileId(int(t["tile"][0]), int(t["tile"][1])), t["tree"], t["raster"], t["source"], int(t["edge_points"]))
            for t in doc["tiles"]
        ]
        m = Manifest(
            root=path.parent,
            n_rows=int(doc["grid"]["n_rows"]),
            n_cols=int(doc["grid"]["n_cols"]),
            max_gap_m=float(doc["max_gap_m"]),
            generator_file=doc["generators"],
            tiles=entries,
            radius_m=float(doc["radius_m"]),
            leaf_size=int(doc.get("leaf_size", DEFAULT_LEAF_SIZE)),
            chunk_size=int(doc.get("chunk_size", DEFAULT_CHUNK_SIZE)),
            format_version=version,
            path=path,
        )
    except (KeyError, TypeError, ValueError, IndexError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: malformed manifest ({exc!r})") from None
    if m.radius_m != EARTH_RADIUS_M:
        raise ManifestError(f"{path}: dataset built for sphere radius {m.radius_m}, engine uses {EARTH_RADIUS_M}")
    required = [m.generator_path] + [m.root / f for e in entries for f in (e.tree_file, e.raster_file)]
    for f in required:
        if not f.exists():
            raise MissingFile(f)
    # the generator file is small and always needed, so verify it now
    m.load_generators()
    return m


# -- dataset assembly -------------------------------------------------------------


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def tree_name(tile: TileId) -> str:
    return f"trees/{tile}.lhbt"


def raster_name(tile: TileId) -> str:
    return f"rasters/{tile}.lhrc"


def write_dataset(
    tiles: Sequence[tuple[RasterTile, EdgeSet]],
    gens: GeneratorSet,
    out_dir: str | Path,
    sources: Iterable[str] | None = None,
    leaf_size: int = DEFAULT_LEAF_SIZE,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> Manifest:
    """Write trees, rasters, generators and the manifest; identical inputs give identical bytes."""
    if not tiles:
        raise ValueError("write_dataset needs at least one tile")
    out = Path(out_dir)
    sources = list(sources) if sources is not None else ["synthetic"] * len(tiles)
    if len(sources) != len(tiles):
        raise ValueError("one source tag per tile is required")
    dims = {(r.n_rows, r.n_cols) for r, _ in tiles}
    if len(dims) != 1:
        raise DimensionMismatch(f"tiles have differing grid dimensions: {sorted(dims)}")
    (n_rows, n_cols) = dims.pop()
    order = sorted(range(len(tiles)), key=lambda i: tiles[i][0].tile)
    entries = []
    seen = set()
    for i in order:
        raster, edges = tiles[i]
        tile = raster.tile
        if tile in seen:
            raise DuplicateTile(f"tile {tuple(tile)} given twice")
        seen.add(tile)
        if edges.tile != tile or (edges.n_rows, edges.n_cols) != (n_rows, n_cols):
            raise DimensionMismatch(f"edge set does not match raster for tile {tuple(tile)}")
        tree = build_tree(edges, leaf_size) if len(edges) else CoastTree.empty(tile, leaf_size)
        atomic_write(out / tree_name(tile), serialize_tree(tree))
        atomic_write(out / raster_name(tile), serialize_raster(raster, chunk_size))
        entries.append(TileEntry(tile, tree_name(tile), raster_name(tile), sources[i], len(edges)))
    atomic_write(out / GENERATORS_NAME, serialize_generators(gens))
    m = Manifest(
        root=out,
        n_rows=n_rows,
        n_cols=n_cols,
        max_gap_m=float(gens.max_gap_m),
        generator_file=GENERATORS_NAME,
        tiles=entries,
        leaf_size=leaf_size,
        chunk_size=chunk_size,
        path=out / MANIFEST_NAME,
    )
    atomic_write(out / MANIFEST_NAME, m.dumps().encode("utf-8"))
    return m
