"""Voxel-exact ray traversal (Amanatides & Woo) over a :class:`VoxelGrid`.

On exact ties between axis crossings the step order is x, then y, then z.
Depths are entry distances along unit directions, in meters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .. import _threads  # noqa: F401  (threading layer setup)
from ..core import DEFAULT_TAXONOMY, VoxelGrid


@dataclass(frozen=True)
class RayHit:
    hit: bool
    depth: float
    class_id: int
    voxel: Optional[tuple] = None


@dataclass(frozen=True)
class RaySet:
    origins: np.ndarray      # (R, 3)
    directions: np.ndarray   # (R, 3), unit length
    max_range: float = 100.0

    def __post_init__(self):
        o = np.asarray(self.origins, dtype=np.float64).reshape(-1, 3)
        d = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        if o.shape[0] == 1 and d.shape[0] > 1:
            o = np.repeat(o, d.shape[0], axis=0)
        if o.shape != d.shape:
            raise ValueError(f"{o.shape[0]} origins vs {d.shape[0]} directions")
        if np.any(np.abs(np.linalg.norm(d, axis=1) - 1.0) > 1e-6):
            raise ValueError("ray directions must be unit vectors")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        object.__setattr__(self, "origins", o)
        object.__setattr__(self, "directions", d)

    def __len__(self) -> int:
        return self.origins.shape[0]

    @classmethod
    def lidar(cls, origin=(0.0, 0.0, 1.0), rings: int = 32, azimuths: int = 360,
              elevation=(-30.0, 10.0), max_range: float = 100.0) -> "RaySet":
        """Spinning-LiDAR pattern: ``rings`` elevations x ``azimuths`` headings."""
        el = np.deg2rad(np.linspace(elevation[0], elevation[1], rings))
        az = np.deg2rad(np.arange(azimuths) * (360.0 / azimuths))
        E, A = np.meshgrid(el, az, indexing="ij")
        d = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], -1)
        d = d.reshape(-1, 3)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return cls(np.asarray(origin, float).reshape(1, 3), d, max_range)

    @classmethod
    def frustum(cls, origin=(0.0, 0.0, 1.0), nx: int = 16, ny: int = 16,
                azimuth=(-45.0, 45.0), elevation=(-25.0, 15.0),
                max_range: float = 100.0) -> "RaySet":
        """Forward-facing (+x) ``nx`` x ``ny`` grid of rays."""
        az = np.deg2rad(np.linspace(azimuth[0], azimuth[1], nx))
        el = np.deg2rad(np.linspace(elevation[0], elevation[1], ny))
        E, A = np.meshgrid(el, az, indexing="ij")
        d = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], -1)
        d = d.reshape(-1, 3)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return cls(np.asarray(origin, float).reshape(1, 3), d, max_range)


RAY_PRESETS = {
    "lidar32": lambda origin, max_range: RaySet.lidar(origin, max_range=max_range),
    "grid16": lambda origin, max_range: RaySet.frustum(origin, max_range=max_range),
}


@numba.njit(cache=True)
def _traverse(labels, org, vs, free, ro, rd, max_range, visible, mark):
    """Walk one ray. Returns (hit, depth, class, i, j, k)."""
    nx, ny, nz = labels.shape
    dims = (nx, ny, nz)
    # clip against the grid box
    t0 = 0.0
    t1 = max_range
    for a in range(3):
        lo = org[a]
        hi = org[a] + dims[a] * vs
        if rd[a] == 0.0:
            if ro[a] < lo or ro[a] >= hi:
                return False, 0.0, -1, -1, -1, -1
        else:
            ta = (lo - ro[a]) / rd[a]
            tb = (hi - ro[a]) / rd[a]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    if t0 > t1:
        return False, 0.0, -1, -1, -1, -1
    idx = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    t_max = np.empty(3)
    t_delta = np.empty(3)
    for a in range(3):
        c = int(np.floor((ro[a] + t0 * rd[a] - org[a]) / vs))
        if c < 0:
            c = 0
        elif c >= dims[a]:
            c = dims[a] - 1
        idx[a] = c
        if rd[a] > 0.0:
            step[a] = 1
            t_max[a] = (org[a] + (c + 1) * vs - ro[a]) / rd[a]
            t_delta[a] = vs / rd[a]
        elif rd[a] < 0.0:
            step[a] = -1
            t_max[a] = (org[a] + c * vs - ro[a]) / rd[a]
            t_delta[a] = -vs / rd[a]
        else:
            step[a] = 0
            t_max[a] = np.inf
            t_delta[a] = np.inf
    t_enter = t0
    while True:
        if mark:
            visible[idx[0], idx[1], idx[2]] = True
        lab = labels[idx[0], idx[1], idx[2]]
        if lab != free:
            return True, t_enter, int(lab), idx[0], idx[1], idx[2]
        if t_max[0] <= t_max[1] and t_max[0] <= t_max[2]:
            a = 0
        elif t_max[1] <= t_max[2]:
            a = 1
        else:
            a = 2
        t_enter = t_max[a]
        if t_enter > max_range:
            return False, 0.0, -1, -1, -1, -1
        idx[a] += step[a]
        if idx[a] < 0 or idx[a] >= dims[a]:
            return False, 0.0, -1, -1, -1, -1
        t_max[a] += t_delta[a]


@numba.njit(cache=True, parallel=True)
def _cast_many(labels, org, vs, free, origins, dirs, max_range, hit, depth, cls):
    dummy = np.zeros((1, 1, 1), np.bool_)
    for r in numba.prange(origins.shape[0]):
        h, d, c, _, _, _ = _traverse(labels, org, vs, free, origins[r], dirs[r],
                                     max_range, dummy, False)
        hit[r] = h
        depth[r] = d
        cls[r] = c


@numba.njit(cache=True)
def _mark_many(labels, org, vs, free, origins, dirs, max_range, visible):
    for r in range(origins.shape[0]):
        _traverse(labels, org, vs, free, origins[r], dirs[r], max_range, visible, True)


def cast_ray(grid: VoxelGrid, origin, direction, max_range: float = 100.0,
             free_id: int = DEFAULT_TAXONOMY.free_id) -> RayHit:
    """First non-free voxel along the ray, with its entry depth."""
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("direction must be a unit vector")
    h, depth, c, i, j, k = _traverse(grid.labels, grid.origin, grid.voxel_size, free_id,
                                     np.asarray(origin, np.float64).reshape(3), d,
                                     float(max_range), np.zeros((1, 1, 1), np.bool_), False)
    if not h:
        return RayHit(False, 0.0, -1, None)
    return RayHit(True, float(depth), int(c), (int(i), int(j), int(k)))


def cast_rays(grid: VoxelGrid, rays: RaySet, free_id: int = DEFAULT_TAXONOMY.free_id):
    """Vectorized :func:`cast_ray`; returns ``(hit, depth, class_id)`` arrays."""
    n = len(rays)
    hit = np.zeros(n, dtype=bool)
    depth = np.zeros(n)
    cls = np.full(n, -1, dtype=np.int64)
    if n:
        _cast_many(grid.labels, grid.origin, grid.voxel_size, free_id, rays.origins,
                   rays.directions, float(rays.max_range), hit, depth, cls)
    return hit, depth, cls


def mark_visible(grid: VoxelGrid, origins, directions, max_range: float,
                 free_id: int, visible: np.ndarray) -> None:
    """Set ``visible`` for every voxel each ray crosses up to its first hit."""
    o = np.ascontiguousarray(np.asarray(origins, np.float64).reshape(-1, 3))
    d = np.ascontiguousarray(np.asarray(directions, np.float64).reshape(-1, 3))
    if len(o) == 1 and len(d) > 1:
        o = np.ascontiguousarray(np.repeat(o, len(d), axis=0))
    _mark_many(grid.labels, grid.origin, grid.voxel_size, free_id, o, d,
               float(max_range), visible)
