"""Fast distance-to-coastline and land-cover lookups from anywhere on Earth."""

from .coast_tree import CoastTree, NearestHit, build_tree, deserialize_tree, serialize_tree
from .engine import Engine, QueryResult, open_engine
from .errors import LighthouseError
from .geo import EARTH_RADIUS_M, GeoPoint, TileId, haversine_m, tile_of
from .ingest import ClassLabel, RasterTile, build_tile, rasterize_polygons
from .router import GeneratorSet, Router, build_router, downsample
from .store import Manifest, open_manifest, read_class, write_dataset

__version__ = "0.1.0"

__all__ = [
    "CoastTree",
    "ClassLabel",
    "EARTH_RADIUS_M",
    "Engine",
    "GeneratorSet",
    "GeoPoint",
    "LighthouseError",
    "Manifest",
    "NearestHit",
    "QueryResult",
    "RasterTile",
    "Router",
    "TileId",
    "build_router",
    "build_tile",
    "build_tree",
    "deserialize_tree",
    "downsample",
    "haversine_m",
    "open_engine",
    "open_manifest",
    "rasterize_polygons",
    "read_class",
    "serialize_tree",
    "tile_of",
    "write_dataset",
]
