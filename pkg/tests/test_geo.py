import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lighthouse.errors import InvalidCoordinate, OutOfRange
from lighthouse.geo import (
    EARTH_RADIUS_M,
    GeoPoint,
    TileId,
    UnitVec3,
    haversine_angle,
    haversine_m,
    min_distance_to_tile_boundary,
    normalize_lon,
    tile_neighbors,
    tile_of,
)

lats = st.floats(-90, 90, allow_nan=False)
lons = st.floats(-180, 180, allow_nan=False, exclude_max=True)
points = st.builds(GeoPoint, lats, lons)


def textbook_haversine(lat1, lon1, lat2, lon2):
    # straight from the formula, degrees in, meters out
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = math.radians(lat2 - lat1)
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.atan2(math.sqrt(a), math.sqrt(1 - a))


def test_identity_distance_is_zero():
    assert haversine_m(GeoPoint(0, 0), GeoPoint(0, 0)) == 0.0


def test_quarter_great_circle():
    d = haversine_m(GeoPoint(0, 0), GeoPoint(0, 90))
    assert d == pytest.approx(math.pi / 2 * EARTH_RADIUS_M, abs=0.1)
    assert d == pytest.approx(10_007_557.22, abs=0.1)


def test_meridian_arc():
    d = haversine_m(GeoPoint(0, 0), GeoPoint(0.001, 0))
    assert d == pytest.approx(111.1949, abs=1e-3)
    assert d == pytest.approx(math.pi * EARTH_RADIUS_M / 180 * 0.001, rel=1e-9)


def test_matches_textbook_formula():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        a = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
        b = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
        want = textbook_haversine(a.lat, a.lon, b.lat, b.lon)
        assert haversine_m(a, b) == pytest.approx(want, rel=1e-9, abs=1e-6)


@given(points, points)
def test_symmetric(a, b):
    assert haversine_m(a, b) == haversine_m(b, a)


@given(points, points, points)
def test_triangle_inequality(a, b, c):
    assert haversine_m(a, c) <= haversine_m(a, b) + haversine_m(b, c) + 1e-6


@given(points)
def test_unit_vector_round_trip(p):
    v = UnitVec3.from_geo(p)
    assert v.norm() == pytest.approx(1.0, abs=1e-12)
    back = v.to_geo()
    assert haversine_m(p, back) < 1e-6


@pytest.mark.parametrize(
    "lat, lon, tile",
    [(47.65, -122.35, (47, -123)), (-0.5, 0.5, (-1, 0)), (90, 0, (89, 0)), (-90, -180, (-90, -180))],
)
def test_tile_of_examples(lat, lon, tile):
    assert tile_of(GeoPoint(lat, lon)) == TileId(*tile)


@given(points)
def test_tile_contains_point(p):
    t = tile_of(p)
    assert t.lat_floor <= p.lat < t.lat_floor + 1 or (p.lat == 90 and t.lat_floor == 89)
    assert t.lon_floor <= p.lon < t.lon_floor + 1


def test_longitude_wraps():
    assert normalize_lon(180.0) == -180.0
    assert normalize_lon(540.5) == pytest.approx(-179.5)
    assert GeoPoint(10, 190).lon == pytest.approx(-170)


@pytest.mark.parametrize("lat, lon", [(91, 0), (-90.5, 0), (math.nan, 0), (0, math.inf)])
def test_invalid_coordinates(lat, lon):
    with pytest.raises(InvalidCoordinate):
        GeoPoint(lat, lon)


def test_neighbors_wrap_antimeridian():
    near = set(tile_neighbors(TileId(10, 179)))
    assert TileId(10, -180) in near and TileId(11, -180) in near
    assert len(near) == 8
    assert len(set(tile_neighbors(TileId(89, 0)))) == 5


def test_tile_string_round_trip():
    t = TileId(47, -123)
    assert str(t) == "+47-123"
    assert TileId.parse(str(t)) == t


def test_boundary_bound_at_tile_center():
    unit = math.pi * EARTH_RADIUS_M / 180
    b = min_distance_to_tile_boundary(GeoPoint(0.5, 0.5), TileId(0, 0))
    assert 0.49 * unit <= b <= 0.5 * unit


def test_boundary_bound_on_edge_is_zero():
    assert min_distance_to_tile_boundary(GeoPoint(3.0, 7.25), TileId(3, 7)) == 0.0


def test_boundary_bound_rejects_outside_point():
    with pytest.raises(OutOfRange):
        min_distance_to_tile_boundary(GeoPoint(1.5, 0.5), TileId(0, 0))


def _boundary_samples(t: TileId, n: int):
    # n points spread over the four edges, just outside the tile
    k = n // 4
    s = np.linspace(0, 1, k)
    la, lo = t.lat_floor, t.lon_floor
    lat = np.concatenate([np.full(k, la), np.full(k, min(la + 1, 90)), la + s, la + s])
    lon = np.concatenate([lo + s, lo + s, np.full(k, lo), np.full(k, lo + 1)])
    return np.radians(lat), np.radians(lon)


def test_boundary_bound_never_exceeds_sampled_minimum():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        t = TileId(int(rng.integers(-90, 90)), int(rng.integers(-180, 180)))
        p = GeoPoint(t.lat_floor + rng.random() * 0.999999, t.lon_floor + rng.random() * 0.999999)
        blat, blon = _boundary_samples(t, 10_000)
        plat, plon = p.radians
        brute = haversine_angle(plat, plon, blat, blon).min() * EARTH_RADIUS_M
        assert min_distance_to_tile_boundary(p, t) <= brute


@settings(max_examples=200)
@given(st.integers(-90, 89), st.integers(-180, 179), st.floats(0, 0.999), st.floats(0, 0.999))
def test_boundary_bound_is_conservative_near_poles(lat_floor, lon_floor, fy, fx):
    t = TileId(lat_floor, lon_floor)
    p = GeoPoint(lat_floor + fy, lon_floor + fx)
    blat, blon = _boundary_samples(t, 4000)
    plat, plon = p.radians
    brute = haversine_angle(plat, plon, blat, blon).min() * EARTH_RADIUS_M
    assert min_distance_to_tile_boundary(p, t) <= brute
