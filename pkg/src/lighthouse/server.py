"""HTTP query service backed by one shared :class:`~lighthouse.engine.Engine`.

Endpoints::

    GET  /v1/distance?lat=..&lon=..   single query
    POST /v1/distance/batch           {"points": [{"lat": .., "lon": ..}, ...]}
    GET  /v1/healthz                  200 once the manifest is loaded
    GET  /v1/stats                    engine counters and process memory

Errors come back as ``{"error": {"code": ..., "message": ...}}``.  Every
response carries the server-side handling time in ``X-Lighthouse-Latency-Ms``.
"""

from __future__ import annotations

import json
import logging
import math
import signal
import threading
import time
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .bench import peak_rss_bytes
from .engine import Engine, QueryResult
from .errors import InvalidCoordinate, LighthouseError
from .geo import GeoPoint

log = logging.getLogger("lighthouse.server")

MAX_BATCH = 10_000
MAX_BODY_BYTES = 4 * 2**20
LATENCY_HEADER = "X-Lighthouse-Latency-Ms"


class RequestError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


def result_json(r: QueryResult) -> str:
    """JSON text for one result; distances always carry 6 fractional digits."""
    return (
        '{"distance_m": %.6f, "nearest": {"lat": %s, "lon": %s}, "class": %s, '
        '"tile": {"lat_floor": %d, "lon_floor": %d}}'
        % (
            r.distance_m,
            json.dumps(r.nearest.lat),
            json.dumps(r.nearest.lon),
            json.dumps(r.class_label.name),
            r.tile.lat_floor,
            r.tile.lon_floor,
        )
    )


def _number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise RequestError(400, "invalid_coordinate", f"{name} must be a number")
    try:
        x = float(value)
    except ValueError:
        raise RequestError(400, "invalid_coordinate", f"{name}={value!r} is not a number") from None
    if not math.isfinite(x):
        raise RequestError(400, "invalid_coordinate", f"{name} must be finite")
    return x


def parse_point(lat, lon) -> GeoPoint:
    try:
        return GeoPoint(_number(lat, "lat"), _number(lon, "lon"))
    except InvalidCoordinate as exc:
        raise RequestError(400, "invalid_coordinate", str(exc)) from None


class QueryServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, engine: Engine, max_concurrency: int = 8):
        super().__init__(address, QueryHandler)
        self.engine = engine
        self.slots = threading.BoundedSemaphore(max(1, max_concurrency))
        self.inflight = 0
        self.requests = 0
        self._count_lock = threading.Lock()
        self.started = time.time()

    def enter(self) -> None:
        with self._count_lock:
            self.inflight += 1
            self.requests += 1

    def leave(self) -> None:
        with self._count_lock:
            self.inflight -= 1

    def drain(self, deadline_s: float) -> bool:
        """Wait for in-flight requests after ``shutdown()``; True if all finished."""
        end = time.monotonic() + deadline_s
        while time.monotonic() < end:
            with self._count_lock:
                if self.inflight == 0:
                    return True
            time.sleep(0.01)
        return False


class QueryHandler(BaseHTTPRequestHandler):
    server: QueryServer
    protocol_version = "HTTP/1.1"
    server_version = "lighthouse/0.1"

    def log_message(self, fmt, *args):  # route http.server chatter through logging
        log.debug(fmt, *args)

    def _send(self, status: int, body: str, started: float) -> None:
        data = body.encode("utf-8")
        latency_ms = (time.perf_counter() - started) * 1000
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.send_header(LATENCY_HEADER, f"{latency_ms:.3f}")
        self.end_headers()
        self.wfile.write(data)
        log.info(
            json.dumps(
                {"method": self.command, "path": urlsplit(self.path).path, "status": status, "latency_ms": round(latency_ms, 3)}
            )
        )

    def _error(self, status: int, code: str, message: str, started: float) -> None:
        self._send(status, json.dumps({"error": {"code": code, "message": message}}), started)

    def _dispatch(self, handler) -> None:
        started = time.perf_counter()
        self.server.enter()
        try:
            with self.server.slots:
                status, body = handler()
            self._send(status, body, started)
        except RequestError as exc:
            self._error(exc.status, exc.code, str(exc), started)
        except LighthouseError as exc:
            log.exception("engine error")
            self._error(500, exc.code, str(exc), started)
        except Exception as exc:  # never let a request take the server down
            log.exception("unhandled error")
            self._error(500, "internal_error", repr(exc), started)
        finally:
            self.server.leave()

    def do_GET(self):
        self._dispatch(self._get)

    def do_POST(self):
        self._dispatch(self._post)

    def _get(self):
        url = urlsplit(self.path)
        if url.path == "/v1/distance":
            params = parse_qs(url.query, keep_blank_values=True)
            for name in ("lat", "lon"):
                if len(params.get(name, [])) != 1:
                    raise RequestError(400, "missing_parameter", f"exactly one '{name}' parameter is required")
            q = parse_point(params["lat"][0], params["lon"][0])
            return 200, result_json(self.server.engine.query(q))
        if url.path == "/v1/healthz":
            m = self.server.engine.manifest
            return 200, json.dumps({"status": "ok", "tiles": len(m.tiles)})
        if url.path == "/v1/stats":
            doc = self.server.engine.stats().to_json()
            doc["requests"] = self.server.requests
            doc["peak_rss_bytes"] = peak_rss_bytes()
            doc["uptime_s"] = round(time.time() - self.server.started, 3)
            return 200, json.dumps(doc)
        raise RequestError(404, "not_found", f"no such endpoint: {url.path}")

    def _read_body(self) -> bytes:
        try:
            length = int(self.headers.get("Content-Length", ""))
        except ValueError:
            raise RequestError(411, "length_required", "Content-Length header is required") from None
        if length < 0:
            raise RequestError(400, "bad_request", "negative Content-Length")
        if length > MAX_BODY_BYTES:
            # drain what we can so the connection stays usable
            self.close_connection = True
            raise RequestError(413, "payload_too_large", f"body exceeds {MAX_BODY_BYTES} bytes")
        return self.rfile.read(length)

    def _post(self):
        url = urlsplit(self.path)
        if url.path != "/v1/distance/batch":
            raise RequestError(404, "not_found", f"no such endpoint: {url.path}")
        body = self._read_body()
        try:
            doc = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise RequestError(400, "malformed_json", "request body is not valid JSON") from None
        points = doc.get("points") if isinstance(doc, dict) else None
        if not isinstance(points, list) or not points:
            raise RequestError(400, "bad_request", "'points' must be a non-empty array")
        if len(points) > MAX_BATCH:
            raise RequestError(413, "batch_too_large", f"at most {MAX_BATCH} points per batch, got {len(points)}")
        qs = []
        for i, p in enumerate(points):
            if not isinstance(p, dict) or "lat" not in p or "lon" not in p:
                raise RequestError(400, "bad_request", f"points[{i}] must be an object with 'lat' and 'lon'")
            try:
                qs.append(parse_point(p["lat"], p["lon"]))
            except RequestError as exc:
                raise RequestError(400, exc.code, f"points[{i}]: {exc}") from None
        results = self.server.engine.query_batch(qs)
        return 200, '{"results": [' + ", ".join(result_json(r) for r in results) + "]}"


def make_server(engine: Engine, host: str = "127.0.0.1", port: int = 8080, max_concurrency: int = 8) -> QueryServer:
    return QueryServer((host, port), engine, max_concurrency)


def serve_forever(
    server: QueryServer, drain_deadline_s: float = 10.0, install_signals: bool = True, ready=None
) -> None:
    """Serve until SIGTERM/SIGINT, then stop accepting and drain in-flight requests.

    ``ready`` is called once signal handlers are in place and requests are being accepted.
    """
    stop = threading.Event()

    def _stop(signum, frame):
        stop.set()

    if install_signals:
        signal.signal(signal.SIGTERM, _stop)
        signal.signal(signal.SIGINT, _stop)
    t = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.1}, daemon=True)
    t.start()
    if ready is not None:
        ready()
    try:
        while not stop.wait(0.2):
            pass
    finally:
        server.shutdown()
        if not server.drain(drain_deadline_s):
            log.warning("shutdown deadline reached with requests still in flight")
        server.server_close()
        t.join(timeout=1.0)
