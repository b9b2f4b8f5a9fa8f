import random
import threading
import tracemalloc

import numpy as np
import pytest

from lighthouse.coast_tree import build_tree_radians
from lighthouse.engine import Engine, EngineStats, open_engine, query, query_batch, stats
from lighthouse.errors import InvalidCapacity
from lighthouse.geo import GeoPoint, TileId
from lighthouse.ingest import LAND, WATER, RasterTile, build_tile
from lighthouse.oracle import FlatIndex, brute_nearest
from lighthouse.router import Router, downsample, polylines_for
from lighthouse.store import open_manifest, write_dataset
from lighthouse.workloads import stratified_points


def same(result, hit):
    return (result.tile, result.index) == (hit.tile, hit.index) and result.distance_m == pytest.approx(
        hit.distance_m, rel=1e-9, abs=1e-9
    )


@pytest.fixture(scope="module")
def flat7(manifest7):
    return FlatIndex.from_dataset(manifest7)


def test_open_has_empty_cache(world7):
    e = open_engine(world7, 8)
    assert e.stats() == EngineStats()
    assert e.cached_tiles() == []
    assert len(e.manifest.tiles) == 25


@pytest.mark.parametrize("capacity", [0, -1])
def test_capacity_below_one_rejected(world7, capacity):
    with pytest.raises(InvalidCapacity):
        open_engine(world7, capacity)


def test_open_footprint_is_router_sized(world7):
    gen_bytes = (world7 / "generators.lhvg").stat().st_size
    manifest_bytes = (world7 / "lighthouse.manifest").stat().st_size
    tracemalloc.start()
    try:
        before = tracemalloc.get_traced_memory()[0]
        e = open_engine(world7, 8)
        retained = tracemalloc.get_traced_memory()[0] - before
    finally:
        tracemalloc.stop()
    assert e.cached_tiles() == []
    # in-memory generators plus their search index, manifest and a fixed allowance
    assert retained < 4 * gen_bytes + manifest_bytes + 256 * 1024


def test_query_on_coastal_point(manifest7):
    e = open_engine(manifest7.root)
    entry = next(t for t in manifest7.tiles if t.edge_points)
    tree = manifest7.load_tree(entry.tile)
    for i in (0, len(tree) // 2, len(tree) - 1):
        r = query(e, tree.point(i))
        assert r.distance_m == pytest.approx(0.0, abs=1e-6)
        assert r.tile == entry.tile


def test_exact_against_oracle(manifest7, flat7):
    e = open_engine(manifest7.root, 16)
    for q in stratified_points(manifest7, 1500, seed=3):
        assert same(e.query(q), brute_nearest(flat7, q)), q


def test_empty_tree_tile_answers_from_neighbours(manifest7, flat7):
    empty = [t.tile for t in manifest7.tiles if t.edge_points == 0]
    assert empty, "the seed-7 world has an all-land interior tile"
    e = open_engine(manifest7.root, 4)
    rng = np.random.default_rng(0)
    for t in empty:
        for _ in range(50):
            q = GeoPoint(t.lat_floor + rng.random(), t.lon_floor + rng.random())
            r = e.query(q)
            assert r.tile != t
            assert r.class_label.code == LAND
            assert same(r, brute_nearest(flat7, q))


def test_single_tile_world_equals_tree(tmp_path):
    rng = np.random.default_rng(4)
    t = TileId(10, 20)
    classes = (rng.random((64, 64)) < 0.3).astype(np.uint8)
    edges, _ = build_tile(RasterTile(t, classes))
    gens = downsample(polylines_for([edges]), 1000)
    write_dataset([(RasterTile(t, classes), edges)], gens, tmp_path / "one")
    e = open_engine(tmp_path / "one")
    tree = open_manifest(tmp_path / "one").load_tree(t)
    for _ in range(200):
        q = GeoPoint(10 + rng.random(), 20 + rng.random())
        r = e.query(q)
        hit = tree.nearest(q)
        assert (r.index, r.distance_m) == (hit.index, hit.distance_m)
        row, col = int((11 - q.lat) * 64), int((q.lon - 20) * 64)
        assert r.class_label.code == classes[row, col]


def test_high_seas_is_water(manifest7, flat7):
    e = open_engine(manifest7.root)
    for lat, lon in [(0, 0), (-60, 120), (41.3, -80.0), (89.9, 10)]:
        r = e.query(GeoPoint(lat, lon))
        assert r.class_label.code == WATER
        assert same(r, brute_nearest(flat7, GeoPoint(lat, lon)))


def test_class_matches_raster(manifest7):
    e = open_engine(manifest7.root)
    rng = np.random.default_rng(9)
    for _ in range(200):
        entry = manifest7.tiles[int(rng.integers(len(manifest7.tiles)))]
        t = entry.tile
        row, col = (int(x) for x in rng.integers(0, manifest7.n_rows, 2))
        q = GeoPoint(t.lat_floor + 1 - (row + 0.5) / manifest7.n_rows, t.lon_floor + (col + 0.5) / manifest7.n_cols)
        with manifest7.open_raster(t) as h:
            assert e.query(q).class_label.code == h.read_code(row, col)


def test_batch_of_one(manifest7):
    e = open_engine(manifest7.root)
    q = GeoPoint(42.3, -67.7)
    assert query_batch(e, [q]) == [e.query(q)]


def test_repeated_point_hits_cache(manifest7):
    e = open_engine(manifest7.root, 4)
    q = GeoPoint(41.5, -68.5)
    results = e.query_batch([q] * 1000)
    assert len(set(results)) == 1
    s = stats(e)
    assert s.hits >= 999
    assert s.queries == 1000


def test_batch_equals_sequential(manifest7):
    pts = stratified_points(manifest7, 10_000, seed=5)
    seq = open_engine(manifest7.root, 8)
    batch = open_engine(manifest7.root, 8)
    assert batch.query_batch(pts) == [seq.query(q) for q in pts]


def test_stats_identities(manifest7):
    e = open_engine(manifest7.root, 3)
    assert e.stats() == EngineStats()
    e.query(GeoPoint(42.5, -67.5))
    s = e.stats()
    assert s.misses >= 1 and s.queries == 1
    for q in stratified_points(manifest7, 300, seed=1):
        e.query(q)
    s = e.stats()
    # single-threaded: every miss is a load, every load beyond capacity an eviction
    assert s.loads == s.misses
    assert s.cached == min(3, s.loads) and s.evictions == s.loads - s.cached
    assert s.hits + s.misses >= s.queries


def test_counters_are_monotonic(manifest7):
    e = open_engine(manifest7.root, 2)
    prev = e.stats()
    for q in stratified_points(manifest7, 100, seed=2):
        e.query(q)
        cur = e.stats()
        for f in ("queries", "hits", "misses", "evictions", "loads"):
            assert getattr(cur, f) >= getattr(prev, f)
        prev = cur


def test_concurrent_clients_get_correct_results(manifest7, flat7):
    e = open_engine(manifest7.root, 2)
    pts = stratified_points(manifest7, 800, seed=8)
    want = [brute_nearest(flat7, q) for q in pts]
    errors = []

    def client(k):
        order = list(range(len(pts)))
        random.Random(k).shuffle(order)
        for i in order[:200]:
            if not same(e.query(pts[i]), want[i]):
                errors.append((k, i))

    threads = [threading.Thread(target=client, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
    s = e.stats()
    assert s.queries == 1600
    assert s.loads <= s.misses


def test_engine_on_hand_built_router(manifest7):
    e = Engine(manifest7, Router(manifest7.load_generators()), None)
    r = e.query(GeoPoint(44.9, -65.1))
    assert r.tile in manifest7


def test_result_json_shape(manifest7):
    r = open_engine(manifest7.root).query(GeoPoint(0, 0))
    doc = r.to_json()
    assert set(doc) == {"distance_m", "nearest", "class", "tile"}
    assert doc["class"] == "water"
    assert set(doc["nearest"]) == {"lat", "lon"}


def test_ties_across_tiles_go_to_smallest_tile(tmp_path):
    # two tiles with mirror-image coasts; a query on the shared meridian is equidistant
    n = 16
    tiles = []
    for lon_floor, water_cols in ((0, slice(0, 4)), (1, slice(12, 16))):
        t = TileId(0, lon_floor)
        classes = np.ones((n, n), np.uint8)
        classes[:, water_cols] = WATER
        edges, _ = build_tile(RasterTile(t, classes))
        tiles.append((RasterTile(t, classes), edges))
    gens = downsample(polylines_for([e for _, e in tiles]), 1000)
    write_dataset(tiles, gens, tmp_path / "mirror")
    e = open_engine(tmp_path / "mirror")
    flat = FlatIndex.from_dataset(open_manifest(tmp_path / "mirror"))
    q = GeoPoint(0.5 + 0.5 / n, 1.0)
    r = e.query(q)
    hit = brute_nearest(flat, q)
    assert (r.tile, r.index) == (hit.tile, hit.index)


def test_rebuilding_stored_points_keeps_their_order(manifest7):
    t = next(e.tile for e in manifest7.tiles if e.edge_points > 100)
    tree = manifest7.load_tree(t)
    rebuilt = build_tree_radians(t, tree.lat, tree.lon, manifest7.leaf_size)
    assert np.array_equal(rebuilt.lat, tree.lat)
