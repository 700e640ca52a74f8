"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the accelerated kernels under test.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter, defaultdict

import numpy as np


def pairwise(a, b, metric="l1"):
    a = np.asarray(a, float).reshape(-1, 3)
    b = np.asarray(b, float).reshape(-1, 3)
    diff = a[:, None, :] - b[None, :, :]
    if metric == "l1":
        return np.abs(diff).sum(-1)
    return np.sqrt((diff ** 2).sum(-1))


def nearest(queries, points, metric="l1"):
    """Exhaustive NN; ``argmin`` returns the lowest index on ties."""
    d = pairwise(queries, points, metric)
    idx = d.argmin(axis=1)
    return idx, d[np.arange(len(idx)), idx]


def step_weight(d, threshold=0.2, high=5.0, low=1.0):
    return np.where(np.asarray(d) >= threshold, high, low)


def chamfer(pred, gt, threshold=None, high=5.0, low=1.0):
    """Brute-force L1 Chamfer distance; re-weighted when ``threshold`` is given."""
    _, d1 = nearest(pred, gt)
    _, d2 = nearest(gt, pred)
    if threshold is None:
        return d1.mean() + d2.mean()
    return ((step_weight(d1, threshold, high, low) * d1).mean()
            + (step_weight(d2, threshold, high, low) * d2).mean())


def best_assignment(cost):
    """Minimum total over every injective map of the shorter side (fsum-exact)."""
    c = np.asarray(cost, float)
    if c.shape[0] > c.shape[1]:
        c = c.T
    m, n = c.shape
    perms = np.array(list(itertools.permutations(range(n), m)), dtype=np.int64).reshape(-1, m)
    rough = c[np.arange(m), perms].sum(axis=1)
    # re-sum near-minimal candidates exactly so summation order cannot matter
    cand = perms[rough <= rough.min() + 1e-9 * max(1.0, abs(rough.min()))]
    return min(math.fsum(c[i, p[i]] for i in range(m)) for p in cand)


def central_differences(fn, x, h=1e-4):
    x = np.array(x, float)
    out = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        keep = x[idx]
        x[idx] = keep + h
        up = fn(x)
        x[idx] = keep - h
        down = fn(x)
        x[idx] = keep
        out[idx] = (up - down) / (2 * h)
    return out


def focal(scores, targets, weights, gamma=2.0):
    total = 0.0
    for row, t in zip(np.asarray(scores, float), targets):
        p = row[int(t)]
        total += weights[int(t)] * (1 - p) ** gamma * (-math.log(p)) if p < 1 else 0.0
    return total / len(targets)


def tally_voxels(positions, classes, origin, voxel_size, dims):
    """Dict-of-counters majority vote; ties to the lowest class id."""
    votes = defaultdict(Counter)
    for p, c in zip(np.asarray(positions, float), classes):
        ijk = tuple(int(math.floor((p[a] - origin[a]) / voxel_size)) for a in range(3))
        if all(0 <= ijk[a] < dims[a] for a in range(3)):
            votes[ijk][int(c)] += 1
    return {k: min(cnt, key=lambda c: (-cnt[c], c)) for k, cnt in votes.items()}


def confusion_iou(pred, gt, num_semantic, mask=None):
    """Per-class IoU from an explicit confusion matrix over all label values."""
    p = np.asarray(pred).ravel()
    g = np.asarray(gt).ravel()
    if mask is not None:
        m = np.asarray(mask).ravel()
        p, g = p[m], g[m]
    size = int(max(p.max(initial=0), g.max(initial=0), num_semantic)) + 1
    cm = np.zeros((size, size), dtype=np.int64)
    for a, b in zip(g, p):
        cm[a, b] += 1
    out = {}
    for c in range(num_semantic):
        tp = cm[c, c]
        denom = cm[c, :].sum() + cm[:, c].sum() - tp
        if denom:
            out[c] = tp / denom
    return out


def march(labels, origin, voxel_size, ro, rd, max_range, free, substeps=20):
    """First occupied voxel found by sampling the ray every voxel/substeps."""
    labels = np.asarray(labels)
    dims = np.array(labels.shape)
    step = voxel_size / substeps
    ts = np.arange(0.0, max_range + step, step)
    pts = np.asarray(ro, float)[None, :] + ts[:, None] * np.asarray(rd, float)[None, :]
    ijk = np.floor((pts - np.asarray(origin, float)) / voxel_size).astype(np.int64)
    inside = np.all((ijk >= 0) & (ijk < dims), axis=1)
    for k in np.flatnonzero(inside):
        i, j, l = ijk[k]
        if labels[i, j, l] != free:
            return True, (int(i), int(j), int(l)), ts[k]
    return False, None, None


def slab_interval(ro, rd, lo, hi):
    """Parametric interval where the ray is inside the box [lo, hi]."""
    t0, t1 = -np.inf, np.inf
    for a in range(3):
        if rd[a] == 0:
            if not lo[a] <= ro[a] <= hi[a]:
                return np.inf, -np.inf
            continue
        ta = (lo[a] - ro[a]) / rd[a]
        tb = (hi[a] - ro[a]) / rd[a]
        t0 = max(t0, min(ta, tb))
        t1 = min(t1, max(ta, tb))
    return t0, t1


def line_of_sight(labels, origin, voxel_size, ro, dirs, free):
    """Voxels whose box a ray enters no later than its first occupied box."""
    labels = np.asarray(labels)
    origin = np.asarray(origin, float)
    vis = np.zeros(labels.shape, dtype=bool)
    boxes = list(np.ndindex(labels.shape))
    for rd in np.asarray(dirs, float):
        spans = {}
        for ijk in boxes:
            lo = origin + np.array(ijk) * voxel_size
            t0, t1 = slab_interval(ro, rd, lo, lo + voxel_size)
            t0 = max(t0, 0.0)
            if t1 > t0:
                spans[ijk] = t0
        hits = [t for ijk, t in spans.items() if labels[ijk] != free]
        first = min(hits) if hits else np.inf
        for ijk, t in spans.items():
            if t <= first:
                vis[ijk] = True
    return vis


def ray_iou_counts(hit_p, depth_p, cls_p, hit_g, depth_g, cls_g, t):
    """Per-class (tp, fp, fn) by looping over rays one at a time."""
    tp, fp, fn = Counter(), Counter(), Counter()
    for hp, dp, cp, hg, dg, cg in zip(hit_p, depth_p, cls_p, hit_g, depth_g, cls_g):
        matched = hp and hg and cp == cg and abs(dp - dg) <= t
        if matched:
            tp[int(cg)] += 1
            continue
        if hp:
            fp[int(cp)] += 1
        if hg:
            fn[int(cg)] += 1
    return tp, fp, fn


def first_hit_exact(labels, origin, voxel_size, ro, rd, max_range, free):
    """First occupied voxel by exact ray/box intervals over every occupied voxel."""
    labels = np.asarray(labels)
    occ = np.argwhere(labels != free)
    if not len(occ):
        return False, None, None
    lo = np.asarray(origin, float) + occ * voxel_size
    hi = lo + voxel_size
    ro = np.asarray(ro, float)
    rd = np.asarray(rd, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - ro) / rd
        tb = (hi - ro) / rd
    tmin = np.where(rd == 0, np.where((lo <= ro) & (ro < hi), -np.inf, np.inf), np.minimum(ta, tb))
    tmax = np.where(rd == 0, np.where((lo <= ro) & (ro < hi), np.inf, -np.inf), np.maximum(ta, tb))
    t0 = np.maximum(tmin.max(axis=1), 0.0)
    t1 = tmax.min(axis=1)
    ok = (t1 > t0) & (t0 <= max_range)
    if not ok.any():
        return False, None, None
    k = np.flatnonzero(ok)[np.argmin(t0[ok])]
    return True, tuple(int(v) for v in occ[k]), float(t0[k])
