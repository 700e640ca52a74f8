"""Optimal one-to-one assignment (Hungarian baseline).

Shortest augmenting paths with dual potentials, one augmentation per row of
the smaller side. Each augmentation is a dense Dijkstra over the reduced
costs, so the worst case is O(min(m, n) * max(m, n)^2) time and the cost
matrix itself needs O(m * n) memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from ..core import as_point_array
from ..errors import EmptySet, NonFiniteCost


@dataclass(frozen=True)
class Assignment:
    rows: np.ndarray
    cols: np.ndarray
    total_cost: float

    def __len__(self) -> int:
        return self.rows.shape[0]


def pairwise_cost(a, b, metric: str = "l1") -> np.ndarray:
    """Dense ``len(a) x len(b)`` matrix of L1 (default) or L2 distances."""
    pa = as_point_array(a)
    pb = as_point_array(b)
    out = np.empty((pa.shape[0], pb.shape[0]), dtype=np.float64)
    if metric == "l1":
        _l1_cost(pa, pb, out)
    elif metric == "l2":
        _l2_cost(pa, pb, out)
    else:
        raise ValueError(f"unknown cost metric {metric!r}")
    return out


@numba.njit(cache=True)
def _l1_cost(a, b, out):
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            out[i, j] = abs(a[i, 0] - b[j, 0]) + abs(a[i, 1] - b[j, 1]) + abs(a[i, 2] - b[j, 2])


@numba.njit(cache=True)
def _l2_cost(a, b, out):
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            dz = a[i, 2] - b[j, 2]
            out[i, j] = math.sqrt(dx * dx + dy * dy + dz * dz)


def hungarian_match(cost) -> Assignment:
    """Minimum-cost matching of ``min(m, n)`` row/column pairs.

    Rows of the result are sorted ascending. The total is summed with
    ``math.fsum`` so equal-cost optima report bit-identical totals.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost must be a 2D matrix, got shape {c.shape}")
    m, n = c.shape
    if m == 0 or n == 0:
        raise EmptySet("cost matrix has an empty side")
    if not np.isfinite(c).all():
        raise NonFiniteCost("cost matrix contains NaN or infinite entries")
    transposed = m > n
    work = np.ascontiguousarray(c.T if transposed else c)
    col4row = _solve(work)
    rows = np.arange(work.shape[0], dtype=np.int64)
    if transposed:
        rows, cols = col4row, rows
        order = np.argsort(rows)
        rows, cols = rows[order], cols[order]
    else:
        cols = col4row
    total = math.fsum(c[rows, cols].tolist())
    return Assignment(rows, cols, total)


@numba.njit(cache=True)
def _solve(cost):
    # requires rows <= cols; returns the column matched to each row
    n, m = cost.shape
    u = np.zeros(n)
    v = np.zeros(m)
    col4row = np.full(n, -1, np.int64)
    row4col = np.full(m, -1, np.int64)
    path = np.full(m, -1, np.int64)
    dist = np.empty(m)
    seen_row = np.zeros(n, np.bool_)
    seen_col = np.zeros(m, np.bool_)
    todo = np.empty(m, np.int64)
    for start in range(n):
        seen_row[:] = False
        seen_col[:] = False
        dist[:] = np.inf
        for k in range(m):
            todo[k] = m - 1 - k
        n_todo = m
        reach = 0.0
        i = start
        sink = -1
        while sink == -1:
            seen_row[i] = True
            ui = u[i]
            row = cost[i]
            best = np.inf
            best_k = -1
            for k in range(n_todo):
                j = todo[k]
                r = reach + row[j] - ui - v[j]
                if r < dist[j]:
                    path[j] = i
                    dist[j] = r
                # prefer a free column on ties: shorter augmentation
                if dist[j] < best or (dist[j] == best and row4col[j] == -1):
                    best = dist[j]
                    best_k = k
            reach = best
            j = todo[best_k]
            seen_col[j] = True
            n_todo -= 1
            todo[best_k] = todo[n_todo]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
        # deferred dual update over the scanned tree
        u[start] += reach
        for r_i in range(n):
            if seen_row[r_i] and r_i != start:
                u[r_i] += reach - dist[col4row[r_i]]
        for c_j in range(m):
            if seen_col[c_j]:
                v[c_j] -= reach - dist[c_j]
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            nxt = col4row[i]
            col4row[i] = j
            j = nxt
            if i == start:
                break
    return col4row
