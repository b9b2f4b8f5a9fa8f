"""Coordinates, the great-circle metric and the 1x1 degree tiling scheme.

Everything here is a pure function or an immutable value, so it can be shared
freely between threads.  Angles are degrees at the public API boundary and
radians inside trees and the distance kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .errors import InvalidCoordinate, OutOfRange

#: Mean Earth radius (IUGG), meters.  Used for every distance in the package.
EARTH_RADIUS_M = 6_371_008.8

#: Length of one degree of arc on the sphere, meters.
METERS_PER_DEGREE = math.pi * EARTH_RADIUS_M / 180.0

#: Half the circumference; no two points on the sphere are farther apart.
HALF_CIRCUMFERENCE_M = math.pi * EARTH_RADIUS_M


def normalize_lon(lon: float) -> float:
    """Wrap a longitude into [-180, 180)."""
    wrapped = (lon + 180.0) % 360.0
    # float modulo can round up to exactly 360 for tiny negative inputs
    if wrapped >= 360.0:
        wrapped -= 360.0
    out = wrapped - 180.0
    if out >= 180.0:
        out -= 360.0
    return out


@dataclass(frozen=True, slots=True)
class GeoPoint:
    """A latitude/longitude position in degrees.

    Longitude is wrapped into [-180, 180) on construction; latitude outside
    [-90, 90] (or non-finite input) raises :class:`InvalidCoordinate`.
    """

    lat: float
    lon: float

    def __post_init__(self):
        lat = float(self.lat)
        lon = float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise InvalidCoordinate(f"non-finite coordinate ({self.lat!r}, {self.lon!r})")
        if lat < -90.0 or lat > 90.0:
            raise InvalidCoordinate(f"latitude {lat} outside [-90, 90]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", normalize_lon(lon))

    @classmethod
    def from_radians(cls, lat_rad: float, lon_rad: float) -> "GeoPoint":
        lat = math.degrees(lat_rad)
        # clamp rounding spill just past the poles
        lat = min(90.0, max(-90.0, lat))
        return cls(lat, math.degrees(lon_rad))

    @property
    def radians(self) -> tuple[float, float]:
        return math.radians(self.lat), math.radians(self.lon)

    def to_unit(self) -> "UnitVec3":
        return UnitVec3.from_geo(self)


@dataclass(frozen=True, slots=True)
class UnitVec3:
    x: float
    y: float
    z: float

    @classmethod
    def from_geo(cls, p: GeoPoint) -> "UnitVec3":
        lat, lon = p.radians
        c = math.cos(lat)
        return cls(c * math.cos(lon), c * math.sin(lon), math.sin(lat))

    def to_geo(self) -> GeoPoint:
        lat = math.atan2(self.z, math.hypot(self.x, self.y))
        lon = math.atan2(self.y, self.x)
        return GeoPoint.from_radians(lat, lon)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


class TileId(NamedTuple):
    """A 1x1 degree cell ``[lat_floor, lat_floor+1) x [lon_floor, lon_floor+1)``.

    Tuples order lexicographically, which is the tie-break order used when two
    tiles offer equally near coastal points.
    """

    lat_floor: int
    lon_floor: int

    def contains(self, p: GeoPoint) -> bool:
        return tile_of(p) == self

    def center(self) -> GeoPoint:
        return GeoPoint(self.lat_floor + 0.5, self.lon_floor + 0.5)

    def __str__(self) -> str:
        return f"{self.lat_floor:+03d}{self.lon_floor:+04d}"

    @classmethod
    def parse(cls, text: str) -> "TileId":
        """Inverse of ``str(tile)``, e.g. ``"+47-123"``."""
        text = text.strip()
        for i in range(1, len(text)):
            if text[i] in "+-":
                return cls(int(text[:i]), int(text[i:]))
        raise ValueError(f"not a tile id: {text!r}")


def check_tile(t: TileId) -> TileId:
    if not (-90 <= t.lat_floor <= 89 and -180 <= t.lon_floor <= 179):
        raise InvalidCoordinate(f"tile {tuple(t)} outside the global grid")
    return TileId(int(t.lat_floor), int(t.lon_floor))


def tile_of(p: GeoPoint) -> TileId:
    """The floor-cell containing ``p``; the north pole belongs to row 89."""
    lat_floor = min(math.floor(p.lat), 89)
    lon_floor = min(math.floor(p.lon), 179)
    return TileId(lat_floor, lon_floor)


def tile_neighbors(t: TileId) -> Iterator[TileId]:
    """The up-to-8 surrounding tiles, wrapping across the antimeridian."""
    for dlat in (-1, 0, 1):
        lat = t.lat_floor + dlat
        if lat < -90 or lat > 89:
            continue
        for dlon in (-1, 0, 1):
            if dlat == 0 and dlon == 0:
                continue
            lon = (t.lon_floor + dlon + 180) % 360 - 180
            yield TileId(lat, lon)


def haversine_angle(lat1, lon1, lat2, lon2):
    """Central angle in radians between points given in radians.

    Accepts scalars or numpy arrays (broadcasting).  This is the single
    distance kernel used by trees, router, engine and oracle alike, so that
    every code path ranks candidates with bit-identical numbers.
    """
    sdlat = np.sin((lat2 - lat1) * 0.5)
    sdlon = np.sin((lon2 - lon1) * 0.5)
    a = sdlat * sdlat + np.cos(lat1) * np.cos(lat2) * (sdlon * sdlon)
    return 2.0 * np.arcsin(np.sqrt(np.minimum(a, 1.0)))


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    lat1, lon1 = a.radians
    lat2, lon2 = b.radians
    return float(haversine_angle(lat1, lon1, lat2, lon2)) * EARTH_RADIUS_M


def min_distance_to_tile_boundary(p: GeoPoint, t: TileId) -> float:
    """Lower bound, in meters, on the distance from ``p`` to anything outside ``t``.

    Points beyond a latitude edge are at least the meridian arc away.  Points
    beyond a longitude edge are at least as far as the meridian great circle,
    whose distance ``asin(cos(lat) sin(dlon))`` is bounded below by using the
    largest ``|lat|`` found anywhere in the tile.
    """
    if tile_of(p) != t:
        raise OutOfRange(f"point ({p.lat}, {p.lon}) is outside tile {tuple(t)}")
    dlat = min(p.lat - t.lat_floor, t.lat_floor + 1 - p.lat)
    dlat = max(dlat, 0.0)
    lat_arc = math.radians(dlat)
    dlon = min(p.lon - t.lon_floor, t.lon_floor + 1 - p.lon)
    max_abs_lat = max(abs(t.lat_floor), abs(t.lat_floor + 1))
    lon_arc = math.asin(math.cos(math.radians(max_abs_lat)) * math.sin(math.radians(dlon)))
    bound = min(lat_arc, max(lon_arc, 0.0)) * EARTH_RADIUS_M
    return bound * (1.0 - 1e-12)
