import http.client
import json
import shutil
import signal
import subprocess
import sys
import threading

import pytest
from click.testing import CliRunner

from lighthouse.cli import main
from lighthouse.engine import open_engine
from lighthouse.geo import GeoPoint, TileId
from lighthouse.ingest import LandPolygonSet, RasterTile, format_rings, rasterize_polygons, write_image_source
from lighthouse.oracle import FlatIndex, brute_nearest
from lighthouse.server import LATENCY_HEADER, MAX_BATCH, make_server, result_json
from lighthouse.store import open_manifest
from lighthouse.workloads import WORKLOADS


@pytest.fixture
def runner():
    return CliRunner()


# -- cli -----------------------------------------------------------------------


def test_build_synthetic_is_reproducible(runner, tmp_path):
    args = ["build", "--synthetic", "seed=5,tiles=2x2,grid=64", "--jobs", "1"]
    a = runner.invoke(main, args + ["--out", str(tmp_path / "a")])
    b = runner.invoke(main, args + ["--out", str(tmp_path / "b")])
    assert a.exit_code == 0, a.output
    assert b.exit_code == 0, b.output
    m = open_manifest(tmp_path / "a")
    assert 1 <= len(m.tiles) <= 4
    for f in (tmp_path / "a").rglob("*"):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_build_missing_source(runner, tmp_path):
    missing = tmp_path / "nowhere"
    r = runner.invoke(main, ["build", "--source", str(missing), "--out", str(tmp_path / "o")])
    assert r.exit_code == 2
    assert str(missing) in r.output


def test_build_rejects_grid_one(runner, tmp_path):
    r = runner.invoke(main, ["build", "--synthetic", "seed=1", "--grid", "1", "--out", str(tmp_path / "o")])
    assert r.exit_code == 2
    assert not (tmp_path / "o").exists()


def test_build_from_source_directory(runner, tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    island = LandPolygonSet([[(10.2, 20.2), (10.2, 20.7), (10.8, 20.6)]])
    (src / "osm.rings").write_text(format_rings(island))
    raster = rasterize_polygons(LandPolygonSet([[(11.1, 20.1), (11.1, 20.9), (11.9, 20.5)]]), TileId(11, 20), 50, 50)
    write_image_source(RasterTile(raster.tile, raster.classes), src / "n11e20.png", source="esa")
    r = runner.invoke(main, ["build", "--source", str(src), "--out", str(tmp_path / "ds"), "--grid", "50", "--jobs", "1"])
    assert r.exit_code == 0, r.output
    m = open_manifest(tmp_path / "ds")
    assert {(e.tile, e.source) for e in m.tiles} == {(TileId(10, 20), "osm"), (TileId(11, 20), "esa")}


def test_query_on_coast_and_high_seas(runner, world7, manifest7):
    tree = manifest7.load_tree(next(e.tile for e in manifest7.tiles if e.edge_points))
    p = tree.point(0)
    r = runner.invoke(main, ["query", "--manifest", str(world7), "--lat", repr(p.lat), "--lon", repr(p.lon)])
    assert r.exit_code == 0, r.output
    doc = json.loads(r.output)
    assert doc["distance_m"] == pytest.approx(0, abs=1e-6)

    r = runner.invoke(main, ["query", "--manifest", str(world7), "--lat", "-30", "--lon", "10"])
    doc = json.loads(r.output)
    want = brute_nearest(FlatIndex.from_dataset(manifest7), GeoPoint(-30, 10))
    assert doc["class"] == "water"
    assert doc["distance_m"] == pytest.approx(want.distance_m, abs=1e-6)
    assert set(doc) == {"distance_m", "nearest", "class", "tile"}


def test_query_invalid_latitude(runner, world7):
    r = runner.invoke(main, ["query", "--manifest", str(world7), "--lat", "91", "--lon", "0"])
    assert r.exit_code == 2


def test_query_reads_manifest_from_environment(runner, world7):
    r = runner.invoke(main, ["query", "--lat", "42.5", "--lon", "-67.5"], env={"LIGHTHOUSE_MANIFEST": str(world7)})
    assert r.exit_code == 0, r.output


def test_audit_fresh_dataset(runner, world7):
    r = runner.invoke(main, ["audit", "--manifest", str(world7), "--points", "200"])
    assert r.exit_code == 0, r.output
    assert "audit passed" in r.output


def test_audit_zero_points_warns(runner, world7):
    r = runner.invoke(main, ["audit", "--manifest", str(world7), "--points", "0"])
    assert r.exit_code == 0
    assert "warning" in r.output


def test_audit_names_corrupted_tile(runner, world7, tmp_path):
    dst = tmp_path / "bad"
    shutil.copytree(world7, dst)
    m = open_manifest(dst)
    entry = next(e for e in m.tiles if e.edge_points > 100)
    path = m.tree_path(entry.tile)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0x40
    path.write_bytes(bytes(data))
    r = runner.invoke(main, ["audit", "--manifest", str(dst), "--points", "10"])
    assert r.exit_code != 0
    assert str(entry.tile) in r.output or str(tuple(entry.tile)) in r.output


def test_bench_reports_and_plots(runner, small_world, tmp_path):
    out = tmp_path / "bench"
    r = runner.invoke(
        main,
        ["bench", "--manifest", str(small_world), "--queries", "300", "--batch-sizes", "1,10,100",
         "--out", str(out), "--voronoi-plot", str(tmp_path / "v.png"), "--json"],
    )
    assert r.exit_code == 0, r.output
    doc = json.loads(r.output)
    assert doc["warm_ms"]["p99"] > 0
    assert [b["batch_size"] for b in doc["batch"]] == [1, 10, 100]
    assert doc["peak_rss_bytes"] > 0
    assert (out / "latency.png").stat().st_size > 0
    assert len((out / "latencies.tsv").read_text().splitlines()) == 301
    assert (tmp_path / "v.png").stat().st_size > 0


def test_bench_workload_is_seeded(small_world):
    m = open_manifest(small_world)
    for name, make in WORKLOADS.items():
        assert make(m, 200, 4) == make(m, 200, 4), name


# -- http ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def service(world7):
    engine = open_engine(world7, 8)
    server = make_server(engine, "127.0.0.1", 0, max_concurrency=4)
    t = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
    t.start()
    yield server
    server.shutdown()
    server.server_close()


def request(server, method, path, body=None, headers=None):
    conn = http.client.HTTPConnection(*server.server_address[:2], timeout=30)
    try:
        conn.request(method, path, body=body, headers=headers or {})
        resp = conn.getresponse()
        return resp.status, dict(resp.getheaders()), resp.read()
    finally:
        conn.close()


def test_single_query_contract(service):
    status, headers, body = request(service, "GET", "/v1/distance?lat=0&lon=0")
    assert status == 200
    doc = json.loads(body)
    assert set(doc) == {"distance_m", "nearest", "class", "tile"}
    assert set(doc["tile"]) == {"lat_floor", "lon_floor"}
    assert float(headers[LATENCY_HEADER]) >= 0
    assert body.decode() == result_json(service.engine.query(GeoPoint(0, 0)))


def test_healthz_and_stats(service):
    status, _, body = request(service, "GET", "/v1/healthz")
    assert status == 200 and json.loads(body)["status"] == "ok"
    status, _, body = request(service, "GET", "/v1/stats")
    doc = json.loads(body)
    assert status == 200
    assert {"queries", "hits", "misses", "peak_rss_bytes", "requests"} <= set(doc)


@pytest.mark.parametrize(
    "path, code",
    [
        ("/v1/distance?lat=abc&lon=0", "invalid_coordinate"),
        ("/v1/distance?lat=91&lon=0", "invalid_coordinate"),
        ("/v1/distance?lat=nan&lon=0", "invalid_coordinate"),
        ("/v1/distance?lon=0", "missing_parameter"),
        ("/v1/distance?lat=1&lat=2&lon=0", "missing_parameter"),
    ],
)
def test_bad_single_queries(service, path, code):
    status, _, body = request(service, "GET", path)
    assert status == 400
    assert json.loads(body)["error"]["code"] == code


def test_unknown_path(service):
    assert request(service, "GET", "/nope")[0] == 404
    assert request(service, "POST", "/v1/nope", body=b"{}")[0] == 404


@pytest.mark.parametrize(
    "body",
    [
        b"not json",
        b"\xff\xfe",
        b"[]",
        b'{"points": []}',
        b'{"points": "x"}',
        b'{"points": [{"lat": 1}]}',
        b'{"points": [{"lat": "abc", "lon": 0}]}',
        b'{"points": [{"lat": true, "lon": 0}]}',
        b'{"points": [[1, 2]]}',
        b'{"points": [{"lat": 1e400, "lon": 0}]}',
    ],
)
def test_bad_batches(service, body):
    status, _, resp = request(service, "POST", "/v1/distance/batch", body=body, headers={"Content-Type": "application/json"})
    assert status == 400
    assert "error" in json.loads(resp)


def test_batch_too_large(service):
    body = json.dumps({"points": [{"lat": 0, "lon": 0}] * (MAX_BATCH + 1)}).encode()
    status, _, resp = request(service, "POST", "/v1/distance/batch", body=body)
    assert status == 413
    assert json.loads(resp)["error"]["code"] == "batch_too_large"


def test_server_survives_bad_input(service):
    for _ in range(3):
        request(service, "GET", "/v1/distance?lat=&lon=")
    assert request(service, "GET", "/v1/healthz")[0] == 200


def test_concurrent_http_clients(service, manifest7):
    flat = FlatIndex.from_dataset(manifest7)
    pts = [GeoPoint(40 + 0.07 * i, -70 + 0.05 * i) for i in range(80)]
    want = {i: brute_nearest(flat, q) for i, q in enumerate(pts)}
    errors = []

    def client(k):
        for i in range(k, len(pts), 8):
            status, _, body = request(service, "GET", f"/v1/distance?lat={pts[i].lat!r}&lon={pts[i].lon!r}")
            doc = json.loads(body)
            if status != 200 or abs(doc["distance_m"] - want[i].distance_m) > 1e-5:
                errors.append(i)

    threads = [threading.Thread(target=client, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []


def _spawn_serve(world, *extra):
    return subprocess.Popen(
        [sys.executable, "-m", "lighthouse", "serve", "--manifest", str(world), *extra],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )


def test_serve_shuts_down_on_sigterm(world7):
    proc = _spawn_serve(world7, "--port", "0")
    try:
        line = proc.stdout.readline()
        assert line.startswith("listening on http://")
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=20) == 0
    finally:
        if proc.poll() is None:
            proc.kill()


def test_serve_bind_failure_exits_2(world7, service):
    port = service.server_address[1]
    proc = _spawn_serve(world7, "--port", str(port))
    try:
        assert proc.wait(timeout=20) == 2
        assert "cannot bind" in proc.stderr.read()
    finally:
        if proc.poll() is None:
            proc.kill()
