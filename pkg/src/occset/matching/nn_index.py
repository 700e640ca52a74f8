"""Exact nearest-neighbor search over a uniform bucket grid.

Queries expand Chebyshev rings of cells around the query cell and stop once
no unvisited cell can hold a closer point. Ties resolve to the lowest point
index, so results are reproducible and match a brute-force scan exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba

from .. import _threads  # noqa: F401  (threading layer setup)
import numpy as np

from ..core import as_point_array
from ..errors import EmptySet

# Upper bound on dense cells per indexed point before the cell size is grown.
_MAX_CELLS_PER_POINT = 8
_MIN_CELL_BUDGET = 1 << 15

L1 = 1
L2 = 2


@dataclass(frozen=True)
class NnIndex:
    cell_size: float
    lower: np.ndarray      # minimum corner of cell (0, 0, 0)
    dims: np.ndarray       # cell counts per axis
    starts: np.ndarray     # CSR offsets, length prod(dims) + 1
    order: np.ndarray      # point indices sorted by cell, stable
    points: np.ndarray

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def buckets(self) -> dict:
        """Non-empty buckets as ``{(i, j, k): array of point indices}``."""
        out = {}
        counts = np.diff(self.starts)
        for flat in np.flatnonzero(counts):
            key = tuple(int(v) for v in np.unravel_index(flat, tuple(self.dims)))
            out[key] = self.order[self.starts[flat]:self.starts[flat + 1]]
        return out

    def query(self, queries, metric: int = L2):
        """Return ``(indices, distances)`` of the nearest indexed point per query."""
        q = np.ascontiguousarray(as_point_array(queries))
        idx = np.empty(q.shape[0], dtype=np.int64)
        dist = np.empty(q.shape[0], dtype=np.float64)
        if q.shape[0]:
            _query_kernel(q, self.points, self.lower, self.dims, self.cell_size,
                          self.starts, self.order, int(metric), idx, dist)
        return idx, dist


def auto_cell_size(points) -> float:
    """Cell edge giving roughly one point per cell of the bounding box."""
    pts = as_point_array(points)
    if len(pts) == 0:
        raise EmptySet("cannot size an index for an empty point set")
    ext = np.maximum(pts.max(axis=0) - pts.min(axis=0), 1e-9)
    return float(max((np.prod(ext) / len(pts)) ** (1.0 / 3.0), ext.max() * 1e-6))


def build_nn_index(points, cell_size: Optional[float] = None) -> NnIndex:
    """Bucket ``points`` into cubic cells of edge ``cell_size`` (meters).

    The cell size is doubled as needed so the dense cell table stays within
    a small multiple of the point count.
    """
    pts = np.ascontiguousarray(as_point_array(points), dtype=np.float64)
    n = pts.shape[0]
    if n == 0:
        raise EmptySet("cannot index an empty point set")
    if cell_size is None:
        cell_size = auto_cell_size(pts)
    if not cell_size > 0:
        raise ValueError(f"cell_size must be positive, got {cell_size}")
    if not np.isfinite(pts).all():
        raise ValueError("cannot index non-finite coordinates")
    lower = pts.min(axis=0)
    ext = pts.max(axis=0) - lower
    budget = max(_MAX_CELLS_PER_POINT * n, _MIN_CELL_BUDGET)
    cs = float(cell_size)
    while True:
        dims = np.floor(ext / cs).astype(np.int64) + 1
        if float(np.prod(dims.astype(np.float64))) <= budget:
            break
        cs *= 2.0
    cells = np.floor((pts - lower) / cs).astype(np.int64)
    cells = np.minimum(cells, dims - 1)
    flat = (cells[:, 0] * dims[1] + cells[:, 1]) * dims[2] + cells[:, 2]
    order = np.argsort(flat, kind="stable").astype(np.int64)
    counts = np.bincount(flat, minlength=int(np.prod(dims)))
    starts = np.zeros(counts.size + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    return NnIndex(cs, lower, dims, starts, order, pts)


@numba.njit(cache=True, inline="always")
def _dist(q, p, metric):
    dx = q[0] - p[0]
    dy = q[1] - p[1]
    dz = q[2] - p[2]
    if metric == 1:
        return abs(dx) + abs(dy) + abs(dz)
    return dx * dx + dy * dy + dz * dz


@numba.njit(cache=True)
def _scan_cell(flat, q, points, starts, order, metric, best, best_i):
    for t in range(starts[flat], starts[flat + 1]):
        j = order[t]
        d = _dist(q, points[j], metric)
        if d < best or (d == best and j < best_i):
            best = d
            best_i = j
    return best, best_i


@numba.njit(cache=True, parallel=True)
def _query_kernel(queries, points, lower, dims, cs, starts, order, metric, out_i, out_d):
    nx, ny, nz = dims[0], dims[1], dims[2]
    scale = 0.0
    for a in range(3):
        scale = max(scale, abs(lower[a]), abs(lower[a] + dims[a] * cs))
    tol = 1e-7 * cs + 1e-12 * scale
    budget = 4 * points.shape[0] + 64
    for qi in numba.prange(queries.shape[0]):
        q = queries[qi]
        cx = int(np.floor((q[0] - lower[0]) / cs))
        cy = int(np.floor((q[1] - lower[1]) / cs))
        cz = int(np.floor((q[2] - lower[2]) / cs))
        r_max = max(max(cx, nx - 1 - cx), max(max(cy, ny - 1 - cy), max(cz, nz - 1 - cz)))
        r_min = max(max(max(-cx, cx - (nx - 1)), max(-cy, cy - (ny - 1))),
                    max(max(-cz, cz - (nz - 1)), 0))
        best = np.inf
        best_i = -1
        work = 0
        r = r_min
        while r <= r_max:
            # unvisited cells lie in rings >= r: axis gap above (r - 1) cells
            bound = (r - 1) * cs - tol
            if bound > 0.0:
                if metric == 1:
                    if best < bound:
                        break
                elif best < bound * bound:
                    break
            x0 = max(cx - r, 0)
            x1 = min(cx + r, nx - 1)
            y0 = max(cy - r, 0)
            y1 = min(cy + r, ny - 1)
            z0 = max(cz - r, 0)
            z1 = min(cz + r, nz - 1)
            work += (x1 - x0 + 1) * (y1 - y0 + 1)
            if work > budget:
                # far from a thin grid the rings cost more than a plain scan
                for j in range(points.shape[0]):
                    d = _dist(q, points[j], metric)
                    if d < best or (d == best and j < best_i):
                        best = d
                        best_i = j
                break
            for x in range(x0, x1 + 1):
                ax = abs(x - cx)
                for y in range(y0, y1 + 1):
                    ay = abs(y - cy)
                    base = (x * ny + y) * nz
                    if ax == r or ay == r:
                        for z in range(z0, z1 + 1):
                            best, best_i = _scan_cell(base + z, q, points, starts, order,
                                                      metric, best, best_i)
                    else:
                        z = cz - r
                        if z >= 0 and z < nz:
                            best, best_i = _scan_cell(base + z, q, points, starts, order,
                                                      metric, best, best_i)
                        z = cz + r
                        if r > 0 and z >= 0 and z < nz:
                            best, best_i = _scan_cell(base + z, q, points, starts, order,
                                                      metric, best, best_i)
            r += 1
        out_i[qi] = best_i
        out_d[qi] = best if metric == 1 else np.sqrt(best)
