"""Timing harness: Hungarian assignment vs Chamfer + nearest-neighbor labels.

Timings are medians over repeats of the same instance. Memory is the peak of
traced allocations (numpy buffers) during the timed section, which covers the
cost matrix and index arrays but not allocator-internal scratch.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import time
import tracemalloc
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import _threads
from .core import LabeledPointSet, SceneConfig
from .errors import InsufficientData
from .matching import (
    WeightFn,
    assign_labels,
    build_nn_index,
    chamfer_distance_reweighted,
    hungarian_match,
    pairwise_cost,
)

log = logging.getLogger(__name__)

METHODS = ("hungarian", "chamfer")
DEFAULT_SIZES = (100, 1000, 10000)
SCALING_SIZES = (500, 1000, 2000, 4000, 8000)


@dataclass
class BenchRecord:
    method: str
    n_points: int
    wall_time_ms: Optional[float]      # median; None when skipped
    peak_extra_memory: Optional[int]   # bytes; None when unavailable
    repeats: int
    seed: int
    setup_ms: Optional[float] = None   # Hungarian: cost-matrix construction
    skipped: bool = False
    threads: int = 1

    @property
    def total_ms(self) -> Optional[float]:
        if self.wall_time_ms is None:
            return None
        return self.wall_time_ms + (self.setup_ms or 0.0)


@dataclass
class ScalingFit:
    method: str
    exponent: float
    intercept: float
    r2: float
    sizes: List[int]


def make_instance(n: int, seed: int, cfg: Optional[SceneConfig] = None):
    """Two independent uniform point sets of size ``n`` in the scene ROI."""
    cfg = cfg or SceneConfig()
    rng = np.random.default_rng([seed, n])
    lo, hi = np.asarray(cfg.roi_min), np.asarray(cfg.roi_max)
    pred = rng.uniform(lo, hi, size=(n, 3))
    gt = rng.uniform(lo, hi, size=(n, 3))
    cls = rng.integers(0, cfg.taxonomy.num_semantic, size=n)
    return LabeledPointSet(pred), LabeledPointSet(gt, cls)


def chamfer_pipeline(pred: LabeledPointSet, gt: LabeledPointSet, w: WeightFn = WeightFn()):
    """Index both sets, evaluate CD_R and transfer labels."""
    gi = build_nn_index(gt.positions)
    pi = build_nn_index(pred.positions)
    cd, _ = chamfer_distance_reweighted(pred.positions, gt.positions, w,
                                        pred_index=pi, gt_index=gi)
    labels = assign_labels(pred.positions, gt, gt_index=gi)
    return cd, labels


def _warm_up() -> None:
    p, g = make_instance(8, 0)
    chamfer_pipeline(p, g)
    hungarian_match(pairwise_cost(p, g))
    pairwise_cost(p, g, "l2")


def _timed(fn: Callable, repeats: int):
    times, peaks, result = [], [], None
    for _ in range(repeats):
        tracemalloc.reset_peak()
        base = tracemalloc.get_traced_memory()[0]
        t0 = time.perf_counter()
        result = fn()
        times.append((time.perf_counter() - t0) * 1e3)
        peaks.append(tracemalloc.get_traced_memory()[1] - base)
    return float(np.median(times)), max(peaks), result


def run_matching_bench(sizes: Sequence[int] = DEFAULT_SIZES, repeats: int = 5, seed: int = 0,
                       hungarian_cutoff: int = 20000, metric: str = "l1",
                       methods: Sequence[str] = METHODS, threads: int = 1,
                       cfg: Optional[SceneConfig] = None) -> List[BenchRecord]:
    """Time both matching strategies on equal-size random sets for each size."""
    sizes = [int(n) for n in sizes]
    if sizes != sorted(sizes) or not sizes or sizes[0] < 1:
        raise ValueError(f"sizes must be positive and ascending, got {sizes}")
    if repeats < 5:
        raise ValueError("repeats must be >= 5")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    prev_threads = _threads.get_threads()
    threads = _threads.set_threads(threads)
    _warm_up()
    started = tracemalloc.is_tracing()
    if not started:
        tracemalloc.start()
    records: List[BenchRecord] = []
    try:
        for n in sizes:
            pred, gt = make_instance(n, seed, cfg)
            if "hungarian" in methods:
                if n > hungarian_cutoff:
                    log.info("hungarian n=%d skipped (cutoff %d)", n, hungarian_cutoff)
                    records.append(BenchRecord("hungarian", n, None, None, repeats, seed,
                                               skipped=True, threads=threads))
                else:
                    setup, _, cost = _timed(lambda: pairwise_cost(pred, gt, metric), repeats)
                    wall, peak, _ = _timed(lambda: hungarian_match(cost), repeats)
                    peak += cost.nbytes
                    del cost
                    log.info("hungarian n=%d: %.2f ms (+%.2f ms cost matrix)", n, wall, setup)
                    records.append(BenchRecord("hungarian", n, wall, peak, repeats, seed,
                                               setup_ms=setup, threads=threads))
            if "chamfer" in methods:
                wall, peak, _ = _timed(lambda: chamfer_pipeline(pred, gt), repeats)
                log.info("chamfer n=%d: %.3f ms", n, wall)
                records.append(BenchRecord("chamfer", n, wall, peak, repeats, seed,
                                           threads=threads))
    finally:
        if not started:
            tracemalloc.stop()
        _threads.set_threads(prev_threads)
    return records


def fit_scaling_exponents(records: Sequence[BenchRecord], skip_insufficient: bool = False
                          ) -> List[ScalingFit]:
    """Least-squares slope of log(time) against log(n), per method."""
    by_method: Dict[str, List[BenchRecord]] = {}
    for r in records:
        if not r.skipped and r.wall_time_ms is not None and r.wall_time_ms > 0:
            by_method.setdefault(r.method, []).append(r)
    fits = []
    for method, recs in by_method.items():
        n = np.array([r.n_points for r in recs], dtype=np.float64)
        t = np.array([r.wall_time_ms for r in recs], dtype=np.float64)
        if len(np.unique(n)) < 3 or n.max() / n.min() < 8:
            if skip_insufficient:
                continue
            raise InsufficientData(
                f"{method}: need >= 3 sizes spanning >= 8x, got {sorted(set(n.tolist()))}")
        x, y = np.log(n), np.log(t)
        A = np.stack([x, np.ones_like(x)], axis=1)
        (slope, icept), *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - (slope * x + icept)
        ss_tot = float(((y - y.mean()) ** 2).sum())
        r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
        fits.append(ScalingFit(method, float(slope), float(icept), r2,
                               sorted(int(v) for v in n)))
    return fits


def speed_ratio(records: Sequence[BenchRecord], n: int) -> Optional[float]:
    """Hungarian time over Chamfer-pipeline time at size ``n``."""
    t = {r.method: r.wall_time_ms for r in records if r.n_points == n and not r.skipped}
    if "hungarian" in t and "chamfer" in t and t["chamfer"]:
        return t["hungarian"] / t["chamfer"]
    return None


def host_info() -> dict:
    cpu = platform.processor() or platform.machine()
    try:
        for line in Path("/proc/cpuinfo").read_text().splitlines():
            if line.startswith("model name"):
                cpu = line.split(":", 1)[1].strip()
                break
    except OSError:
        pass
    return {"cpu": cpu, "threads": _threads.get_threads(), "python": platform.python_version()}


def _record_row(r: BenchRecord) -> dict:
    d = asdict(r)
    if d["peak_extra_memory"] is None:
        d["peak_extra_memory"] = "unavailable"
    return d


def emit_report(records: Sequence[BenchRecord], fits: Sequence[ScalingFit], path) -> dict:
    """Write ``<stem>.json``, ``<stem>.csv`` and ``<stem>.svg`` next to ``path``."""
    if not records:
        raise ValueError("no records to report")
    path = Path(path)
    stem = path.with_suffix("")
    stem.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "records": [_record_row(r) for r in records],
        "fits": [asdict(f) for f in fits],
        "host": host_info(),
    }
    out = {"json": stem.with_suffix(".json"), "csv": stem.with_suffix(".csv"),
           "svg": stem.with_suffix(".svg")}
    out["json"].write_text(json.dumps(doc, indent=2))
    cols = [f.name for f in fields(BenchRecord)]
    with open(out["csv"], "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        for r in records:
            w.writerow(_record_row(r))
    _plot(records, fits, out["svg"])
    return {k: str(v) for k, v in out.items()}


def _plot(records, fits, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    fit_by = {f.method: f for f in fits}
    for method in sorted({r.method for r in records}):
        pts = sorted((r.n_points, r.wall_time_ms) for r in records
                     if r.method == method and not r.skipped and r.wall_time_ms)
        if not pts:
            continue
        n, t = zip(*pts)
        line, = ax.plot(n, t, "o-", label=method)
        f = fit_by.get(method)
        if f is not None:
            xs = np.array([min(n), max(n)], dtype=float)
            ax.plot(xs, np.exp(f.intercept) * xs ** f.exponent, "--",
                    color=line.get_color(), label=f"{method} fit n^{f.exponent:.2f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("points per set")
    ax.set_ylabel("time (ms)")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    # fixed hash salt and no date keep the SVG byte-stable across runs
    with plt.rc_context({"svg.hashsalt": "occset"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def load_report(path) -> List[BenchRecord]:
    doc = json.loads(Path(path).read_text())
    recs = []
    for d in doc["records"]:
        if d["peak_extra_memory"] == "unavailable":
            d["peak_extra_memory"] = None
        recs.append(BenchRecord(**d))
    return recs
