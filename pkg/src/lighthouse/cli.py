"""``lighthouse`` command line: build | query | serve | bench | audit.

Every option can also be set through a ``LIGHTHOUSE_*`` environment variable
(shown in ``--help``); flags win over the environment, which wins over
defaults.
"""

from __future__ import annotations

import json
import logging
import math
import os
import sys
from pathlib import Path

import click

from .errors import InvalidCoordinate, LighthouseError, MissingFile
from .geo import GeoPoint
from .ingest import DEFAULT_GRID
from .router import DEFAULT_MAX_GAP_M
from .synthetic import SyntheticWorldSpec

manifest_option = click.option(
    "--manifest",
    "manifest",
    envvar="LIGHTHOUSE_MANIFEST",
    show_envvar=True,
    required=True,
    type=click.Path(path_type=Path),
    help="Dataset directory or its lighthouse.manifest file.",
)
cache_option = click.option(
    "--cache",
    "cache",
    envvar="LIGHTHOUSE_CACHE",
    show_envvar=True,
    default=64,
    show_default=True,
    type=int,
    help="Tile cache capacity (tiles); 0 means unbounded.",
)


def _capacity(cache: int) -> int | None:
    if cache < 0:
        raise click.BadParameter("must be >= 0", param_hint="--cache")
    return None if cache == 0 else cache


def _fail(message: str, code: int = 1):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def parse_synthetic(text: str, grid: int | None) -> SyntheticWorldSpec:
    """``"seed=7,tiles=5x5,grid=512"`` (commas or spaces) -> spec."""
    fields: dict = {}
    for item in text.replace(",", " ").split():
        if "=" not in item:
            raise click.BadParameter(f"expected key=value, got {item!r}", param_hint="--synthetic")
        key, value = item.split("=", 1)
        try:
            if key == "tiles":
                a, b = value.lower().split("x")
                fields["n_lat"], fields["n_lon"] = int(a), int(b)
            elif key in ("seed", "grid", "islands", "lat0", "lon0"):
                fields[key] = int(value)
            elif key in ("noise", "radius_min", "radius_max", "lake_fraction"):
                fields[key] = float(value)
            else:
                raise click.BadParameter(f"unknown synthetic field {key!r}", param_hint="--synthetic")
        except ValueError:
            raise click.BadParameter(f"bad value for {key}: {value!r}", param_hint="--synthetic") from None
    if grid is not None and "grid" not in fields:
        fields["grid"] = grid
    return SyntheticWorldSpec(**fields)


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
def main(verbose: int) -> None:
    """Distance to the nearest coastline, from anywhere on Earth."""
    level = logging.WARNING - 10 * verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(asctime)s %(name)s %(levelname)s %(message)s")


@main.command()
@click.option("--source", envvar="LIGHTHOUSE_SOURCE", show_envvar=True, type=click.Path(path_type=Path),
              help="Directory of raster tiles (.lhrc, or image + .json sidecar) and/or .rings vector files.")
@click.option("--synthetic", envvar="LIGHTHOUSE_SYNTHETIC", show_envvar=True,
              help="Generate a synthetic world instead, e.g. 'seed=7,tiles=5x5,grid=512'.")
@click.option("--out", required=True, envvar="LIGHTHOUSE_OUT", show_envvar=True, type=click.Path(path_type=Path),
              help="Output dataset directory.")
@click.option("--grid", type=int, envvar="LIGHTHOUSE_GRID", show_envvar=True,
              help=f"Cells per tile side [default: {DEFAULT_GRID}, or 512 for synthetic worlds].")
@click.option("--max-gap", type=float, default=DEFAULT_MAX_GAP_M, show_default=True, envvar="LIGHTHOUSE_MAX_GAP",
              show_envvar=True, help="Router thinning threshold, meters.")
@click.option("--jobs", type=int, default=os.cpu_count() or 1, envvar="LIGHTHOUSE_JOBS", show_envvar=True,
              help="Worker processes for per-tile work.")
def build(source, synthetic, out, grid, max_gap, jobs):
    """Build a dataset: edge trees, class rasters and the router."""
    from .pipeline import build_dataset, discover_sources, synthetic_jobs

    if (source is None) == (synthetic is None):
        raise click.UsageError("give exactly one of --source or --synthetic")
    if grid is not None and grid < 2:
        raise click.BadParameter("must be at least 2 (edge detection needs a neighbourhood)", param_hint="--grid")
    if max_gap <= 0:
        raise click.BadParameter("must be positive", param_hint="--max-gap")
    try:
        if synthetic is not None:
            spec = parse_synthetic(synthetic, grid)
            if spec.grid < 2:
                raise click.BadParameter("grid must be at least 2", param_hint="--synthetic")
            jobs_list = synthetic_jobs(spec)
        else:
            jobs_list = discover_sources(source, grid or DEFAULT_GRID)
        manifest = build_dataset(jobs_list, out, max_gap_m=max_gap, workers=max(1, jobs))
    except MissingFile as exc:
        _fail(f"source directory not found: {exc.path}", 2)
    except LighthouseError as exc:
        _fail(str(exc))
    total = sum(e.edge_points for e in manifest.tiles)
    click.echo(f"wrote {len(manifest.tiles)} tiles, {total} edge points -> {manifest.path}")


@main.command()
@manifest_option
@click.option("--lat", required=True, type=float, help="Latitude, degrees.")
@click.option("--lon", required=True, type=float, help="Longitude, degrees.")
@cache_option
def query(manifest, lat, lon, cache):
    """Distance to the nearest coast and the land-cover class at one point."""
    from .engine import open_engine
    from .server import result_json

    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise click.BadParameter("coordinates must be finite")
    try:
        q = GeoPoint(lat, lon)
    except InvalidCoordinate as exc:
        raise click.BadParameter(str(exc)) from None
    try:
        engine = open_engine(manifest, _capacity(cache))
        result = engine.query(q)
    except MissingFile as exc:
        _fail(str(exc), 2)
    except LighthouseError as exc:
        _fail(str(exc))
    click.echo(result_json(result))


@main.command()
@manifest_option
@click.option("--host", default="127.0.0.1", show_default=True, envvar="LIGHTHOUSE_HOST", show_envvar=True)
@click.option("--port", default=8080, show_default=True, type=int, envvar="LIGHTHOUSE_PORT", show_envvar=True)
@cache_option
@click.option("--max-concurrency", default=8, show_default=True, type=int, envvar="LIGHTHOUSE_MAX_CONCURRENCY",
              show_envvar=True, help="Requests handled at once.")
@click.option("--drain-deadline", default=10.0, show_default=True, type=float, help="Seconds to finish in-flight requests on shutdown.")
def serve(manifest, host, port, cache, max_concurrency, drain_deadline):
    """Run the HTTP query service until SIGTERM/SIGINT."""
    from .engine import open_engine
    from .server import make_server, serve_forever

    logging.getLogger("lighthouse.server").setLevel(logging.INFO)
    try:
        engine = open_engine(manifest, _capacity(cache))
    except MissingFile as exc:
        _fail(str(exc), 2)
    except LighthouseError as exc:
        _fail(str(exc))
    try:
        server = make_server(engine, host, port, max_concurrency)
    except OSError as exc:
        _fail(f"cannot bind {host}:{port}: {exc}", 2)
    bound_host, bound_port = server.server_address[:2]

    def announce():
        click.echo(f"listening on http://{bound_host}:{bound_port}")
        sys.stdout.flush()

    serve_forever(server, drain_deadline, ready=announce)


@main.command()
@manifest_option
@click.option("--queries", default=10_000, show_default=True, type=int)
@click.option("--workload", type=click.Choice(["mixed", "uniform", "coastal"]), default="mixed", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int, envvar="LIGHTHOUSE_SEED", show_envvar=True)
@cache_option
@click.option("--batch-sizes", default="1,10,100,1000", show_default=True, help="Comma-separated batch sizes to sweep.")
@click.option("--out", type=click.Path(path_type=Path), help="Directory for latencies.tsv and latency.png.")
@click.option("--voronoi-plot", type=click.Path(path_type=Path), help="Also draw the router's Voronoi cells to this file.")
@click.option("--json", "as_json", is_flag=True, help="Print the report as JSON.")
def bench(manifest, queries, workload, seed, cache, batch_sizes, out, voronoi_plot, as_json):
    """Measure cold and warm query latency on a seeded workload."""
    from .bench import plot_latencies, plot_voronoi, run_bench, write_latency_table

    try:
        sizes = tuple(int(s) for s in batch_sizes.split(",") if s.strip())
    except ValueError:
        raise click.BadParameter(batch_sizes, param_hint="--batch-sizes") from None
    try:
        report = run_bench(manifest, queries, workload, seed, _capacity(cache), sizes)
    except MissingFile as exc:
        _fail(str(exc), 2)
    except LighthouseError as exc:
        _fail(str(exc))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_latency_table(report, out / "latencies.tsv")
        plot_latencies(report, out / "latency.png")
    if voronoi_plot is not None:
        plot_voronoi(manifest, voronoi_plot)
    click.echo(json.dumps(report.to_json(), indent=2) if as_json else report.summary())


@main.command()
@manifest_option
@click.option("--points", default=1000, show_default=True, type=int, help="Random engine-vs-oracle query points.")
@click.option("--seed", default=0, show_default=True, type=int, envvar="LIGHTHOUSE_SEED", show_envvar=True)
def audit(manifest, points, seed):
    """Check storage round-trips, router thinning and engine exactness."""
    from .audit import run_audit

    if points < 0:
        raise click.BadParameter("must be >= 0", param_hint="--points")
    if points == 0:
        click.echo("warning: --points 0, engine-vs-oracle comparison is vacuous", err=True)
    report = run_audit(manifest, points, seed, progress=lambda s: click.echo(f"audit: {s}", err=True))
    for key, value in sorted(report.checks.items()):
        click.echo(f"{key}: {value}")
    if report.ok:
        click.echo("audit passed")
        return
    click.echo(f"audit FAILED: {report.failures[0]}")
    sys.exit(1)


if __name__ == "__main__":
    main()
