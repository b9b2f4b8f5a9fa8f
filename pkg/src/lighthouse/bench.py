"""Latency benchmark: cold and warm single queries plus a batch-size sweep."""

from __future__ import annotations

import resource
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import Engine, open_engine
from .workloads import WORKLOADS


def peak_rss_bytes() -> int:
    # ru_maxrss survives exec on Linux, so a freshly started process would report
    # its parent's peak; the kernel's own high-water mark does not
    try:
        with open("/proc/self/status", encoding="ascii") as fh:
            for line in fh:
                if line.startswith("VmHWM:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    # kilobytes on Linux, bytes on macOS
    return int(peak) if sys.platform == "darwin" else int(peak) * 1024


def percentiles_ms(latencies_s) -> dict[str, float]:
    if len(latencies_s) == 0:
        return {"p50": float("nan"), "p90": float("nan"), "p99": float("nan"), "max": float("nan")}
    arr = np.asarray(latencies_s) * 1000.0
    p50, p90, p99 = np.percentile(arr, [50, 90, 99])
    return {"p50": float(p50), "p90": float(p90), "p99": float(p99), "max": float(arr.max())}


@dataclass
class BenchReport:
    workload: str
    queries: int
    seed: int
    cold_ms: dict
    warm_ms: dict
    batch: list[dict] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    peak_rss_bytes: int = 0
    cold_latencies_s: list = field(default_factory=list, repr=False)
    warm_latencies_s: list = field(default_factory=list, repr=False)

    def summary(self) -> str:
        lines = [
            f"workload {self.workload}: {self.queries} queries, seed {self.seed}",
            "phase\tp50_ms\tp90_ms\tp99_ms\tmax_ms",
        ]
        for name, p in (("cold", self.cold_ms), ("warm", self.warm_ms)):
            lines.append(f"{name}\t{p['p50']:.3f}\t{p['p90']:.3f}\t{p['p99']:.3f}\t{p['max']:.3f}")
        if self.batch:
            lines.append("batch_size\tbatches\tper_batch_ms\tper_query_ms")
            for row in self.batch:
                lines.append(f"{row['batch_size']}\t{row['batches']}\t{row['per_batch_ms']:.3f}\t{row['per_query_ms']:.4f}")
        s = self.stats
        lines.append(
            f"cache: hits {s.get('hits')} misses {s.get('misses')} evictions {s.get('evictions')} cached {s.get('cached')}"
        )
        lines.append(f"peak_rss_mb\t{self.peak_rss_bytes / 2**20:.1f}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {
            "workload": self.workload,
            "queries": self.queries,
            "seed": self.seed,
            "cold_ms": self.cold_ms,
            "warm_ms": self.warm_ms,
            "batch": self.batch,
            "stats": self.stats,
            "peak_rss_bytes": self.peak_rss_bytes,
        }


def _timed(engine: Engine, points) -> list[float]:
    out = []
    clock = time.perf_counter
    for q in points:
        t0 = clock()
        engine.query(q)
        out.append(clock() - t0)
    return out


def run_bench(
    manifest_path: str | Path,
    queries: int = 10_000,
    workload: str = "mixed",
    seed: int = 0,
    cache_capacity: int | None = None,
    batch_sizes=(1, 10, 100, 1000),
) -> BenchReport:
    """Replay a seeded workload twice (cold, then warm) and sweep batch sizes."""
    engine = open_engine(manifest_path, cache_capacity)
    points = WORKLOADS[workload](engine.manifest, queries, seed)
    cold = _timed(engine, points)
    warm = _timed(engine, points)
    sweep = []
    for size in batch_sizes:
        if size < 1 or not points:
            continue
        batches = [points[i : i + size] for i in range(0, min(len(points), max(size * 10, size)), size)]
        t0 = time.perf_counter()
        for b in batches:
            engine.query_batch(b)
        elapsed = time.perf_counter() - t0
        n = sum(len(b) for b in batches)
        sweep.append(
            {
                "batch_size": size,
                "batches": len(batches),
                "per_batch_ms": elapsed * 1000 / len(batches),
                "per_query_ms": elapsed * 1000 / n,
            }
        )
    return BenchReport(
        workload=workload,
        queries=queries,
        seed=seed,
        cold_ms=percentiles_ms(cold),
        warm_ms=percentiles_ms(warm),
        batch=sweep,
        stats=engine.stats().to_json(),
        peak_rss_bytes=peak_rss_bytes(),
        cold_latencies_s=cold,
        warm_latencies_s=warm,
    )


def write_latency_table(report: BenchReport, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i\tcold_ms\twarm_ms\n")
        for i, (c, w) in enumerate(zip(report.cold_latencies_s, report.warm_latencies_s)):
            fh.write(f"{i}\t{c * 1000:.4f}\t{w * 1000:.4f}\n")


def plot_latencies(report: BenchReport, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    warm = np.asarray(report.warm_latencies_s) * 1000
    cold = np.asarray(report.cold_latencies_s) * 1000
    hi = max(float(np.percentile(np.concatenate([warm, cold]), 99.5)), 1e-3) if len(warm) else 1.0
    bins = np.linspace(0, hi, 60)
    ax.hist(cold, bins=bins, alpha=0.5, label="cold cache")
    ax.hist(warm, bins=bins, alpha=0.5, label="warm cache")
    ax.axvline(report.warm_ms["p99"], color="k", ls="--", lw=1, label=f"warm p99 {report.warm_ms['p99']:.2f} ms")
    ax.set_xlabel("latency per query (ms)")
    ax.set_ylabel("queries")
    ax.set_title(f"{report.workload} workload, {report.queries} queries")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_voronoi(manifest_path: str | Path, path: Path, max_generators: int = 2000) -> None:
    """Draw the spherical Voronoi cells of (a subsample of) the router generators."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .router import voronoi_cells
    from .store import open_manifest

    gens = open_manifest(manifest_path).load_generators()
    sv = voronoi_cells(gens, max_generators)
    fig, ax = plt.subplots(figsize=(7, 7))
    for region in sv.regions:
        v = sv.vertices[region]
        lat = np.degrees(np.arcsin(np.clip(v[:, 2], -1, 1)))
        lon = np.degrees(np.arctan2(v[:, 1], v[:, 0]))
        if np.ptp(lon) > 180:
            continue
        ax.fill(lon, lat, fill=False, lw=0.3)
    ax.plot(np.degrees(gens.lon), np.degrees(gens.lat), ",", color="tab:red")
    lat_all, lon_all = np.degrees(gens.lat), np.degrees(gens.lon)
    ax.set_xlim(lon_all.min() - 1, lon_all.max() + 1)
    ax.set_ylim(lat_all.min() - 1, lat_all.max() + 1)
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
