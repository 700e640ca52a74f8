"""Occupancy scores: voxelization, mIoU, RayIoU and camera visibility masks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from ..core import DEFAULT_TAXONOMY, ClassTaxonomy, LabeledPointSet, SceneConfig, VoxelGrid
from ..errors import GridMismatch, MissingLabels
from ..sampling import CameraModel
from .raycast import RaySet, cast_rays, mark_visible

DEFAULT_THRESHOLDS = (1.0, 2.0, 4.0)


def voxelize(points: LabeledPointSet, cfg: Union[SceneConfig, VoxelGrid],
             free_id: Optional[int] = None) -> Tuple[VoxelGrid, int]:
    """Majority-vote labels per voxel (ties to the lowest class id).

    ``cfg`` may also be a grid whose geometry is reused (its labels are ignored).
    Returns the grid and the number of points dropped for lying outside the ROI.
    """
    if points.classes is None:
        raise MissingLabels("voxelize needs labeled points")
    if isinstance(cfg, VoxelGrid):
        free = DEFAULT_TAXONOMY.free_id if free_id is None else free_id
        grid = VoxelGrid.empty(cfg.origin, cfg.voxel_size, cfg.dims, free)
    else:
        grid = VoxelGrid.from_config(cfg)
    dims = np.asarray(grid.dims)
    ijk = grid.index_of(points.positions)
    inside = grid.contains_index(ijk)
    dropped = int((~inside).sum())
    ijk = ijk[inside]
    cls = points.classes[inside]
    labels = np.array(grid.labels)
    if len(cls):
        flat = (ijk[:, 2] * dims[1] + ijk[:, 1]) * dims[0] + ijk[:, 0]
        pairs, counts = np.unique(np.stack([flat, cls], axis=1), axis=0, return_counts=True)
        # per voxel: highest count first, then lowest class id
        order = np.lexsort((pairs[:, 1], -counts, pairs[:, 0]))
        pairs = pairs[order]
        first = np.ones(len(pairs), dtype=bool)
        first[1:] = pairs[1:, 0] != pairs[:-1, 0]
        win = pairs[first]
        flat_labels = labels.ravel(order="F")
        flat_labels[win[:, 0]] = win[:, 1]
        labels = flat_labels.reshape(grid.dims, order="F")
    return grid.with_labels(labels), dropped


@dataclass
class MiouReport:
    per_class: Dict[int, float]
    miou: float
    tp: Dict[int, int] = field(default_factory=dict)
    fp: Dict[int, int] = field(default_factory=dict)
    fn: Dict[int, int] = field(default_factory=dict)

    def as_dict(self, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> dict:
        return {
            "miou": self.miou,
            "per_class": {taxonomy.name(c): v for c, v in self.per_class.items()},
            "counts": {taxonomy.name(c): {"tp": self.tp[c], "fp": self.fp[c], "fn": self.fn[c]}
                       for c in self.per_class},
        }


def _check_aligned(pred: VoxelGrid, gt: VoxelGrid) -> None:
    if not pred.aligned_with(gt):
        raise GridMismatch(f"grids differ: {pred!r} vs {gt!r}")


def miou(pred: VoxelGrid, gt: VoxelGrid, mask: Optional[np.ndarray] = None,
         taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> MiouReport:
    """Per-class voxel IoU over the masked support and their mean.

    Classes absent from both grids are left out of the mean; if no class is
    present at all the grids agree trivially and the mean is 1.
    """
    _check_aligned(pred, gt)
    p = pred.labels
    g = gt.labels
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != p.shape:
            raise GridMismatch(f"mask shape {mask.shape} != grid dims {p.shape}")
        p = p[mask]
        g = g[mask]
    else:
        p = p.ravel()
        g = g.ravel()
    per_class, tp_d, fp_d, fn_d = {}, {}, {}, {}
    for c in range(taxonomy.num_semantic):
        pc = p == c
        gc = g == c
        tp = int(np.count_nonzero(pc & gc))
        fp = int(np.count_nonzero(pc & ~gc))
        fn = int(np.count_nonzero(gc & ~pc))
        if tp + fp + fn == 0:
            continue
        per_class[c] = tp / (tp + fp + fn)
        tp_d[c], fp_d[c], fn_d[c] = tp, fp, fn
    mean = float(np.mean(list(per_class.values()))) if per_class else 1.0
    return MiouReport(per_class, mean, tp_d, fp_d, fn_d)


@dataclass
class RayIouReport:
    thresholds: Tuple[float, ...]
    per_threshold: Dict[float, float]
    per_class: Dict[float, Dict[int, float]]
    counts: Dict[float, Dict[int, Tuple[int, int, int]]]
    mean: float
    num_rays: int

    @property
    def monotone(self) -> bool:
        vals = [self.per_threshold[t] for t in sorted(self.thresholds)]
        return all(a <= b for a, b in zip(vals, vals[1:]))

    def as_dict(self, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> dict:
        return {
            "rayiou": self.mean,
            "per_threshold": {f"{t:g}m": v for t, v in self.per_threshold.items()},
            "per_class": {f"{t:g}m": {taxonomy.name(c): v for c, v in pc.items()}
                          for t, pc in self.per_class.items()},
            "counts": {f"{t:g}m": {taxonomy.name(c): {"tp": a, "fp": b, "fn": d}
                                   for c, (a, b, d) in cc.items()}
                       for t, cc in self.counts.items()},
            "monotone": self.monotone,
            "num_rays": self.num_rays,
        }


def rayiou(pred: VoxelGrid, gt: VoxelGrid, rays: RaySet,
           thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
           taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> RayIouReport:
    """Ray-based IoU from first-hit class and depth agreement.

    A ray is a true positive for class c at threshold t when both grids hit,
    both first hits are class c and their depths differ by at most t. Any
    other predicted hit is a false positive for the predicted class and any
    other ground-truth hit a false negative for the ground-truth class.
    Per-class IoUs are averaged over classes hit in the ground truth, then
    over thresholds.
    """
    _check_aligned(pred, gt)
    thresholds = tuple(float(t) for t in thresholds)
    if not thresholds or min(thresholds) <= 0:
        raise ValueError("thresholds must be positive")
    free = taxonomy.free_id
    hp, dp, cp = cast_rays(pred, rays, free)
    hg, dg, cg = cast_rays(gt, rays, free)
    nc = max(taxonomy.num_semantic, int(max(cp.max(initial=-1), cg.max(initial=-1))) + 1)
    present = np.flatnonzero(np.bincount(cg[hg], minlength=nc))
    both = hp & hg & (cp == cg)
    gap = np.abs(dp - dg)
    per_t, per_c, counts = {}, {}, {}
    for t in thresholds:
        match = both & (gap <= t)
        tp = np.bincount(cg[match], minlength=nc)
        fp = np.bincount(cp[hp & ~match], minlength=nc)
        fn = np.bincount(cg[hg & ~match], minlength=nc)
        cls_iou = {}
        cls_cnt = {}
        for c in present:
            denom = tp[c] + fp[c] + fn[c]
            cls_iou[int(c)] = float(tp[c] / denom)
            cls_cnt[int(c)] = (int(tp[c]), int(fp[c]), int(fn[c]))
        if cls_iou:
            score = float(np.mean(list(cls_iou.values())))
        else:
            score = 1.0 if not hp.any() else 0.0
        per_t[t] = score
        per_c[t] = cls_iou
        counts[t] = cls_cnt
    mean = float(np.mean([per_t[t] for t in thresholds]))
    return RayIouReport(thresholds, per_t, per_c, counts, mean, len(rays))


def visibility_mask(gt: VoxelGrid, cams: Sequence[CameraModel], pixel_stride: int = 8,
                    max_range: Optional[float] = None,
                    taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> np.ndarray:
    """Voxels seen by at least one strided pixel ray before (and at) its first hit."""
    if not cams:
        raise ValueError("need at least one camera")
    if pixel_stride < 1:
        raise ValueError("pixel_stride must be >= 1")
    rng = np.inf if max_range is None else float(max_range)
    visible = np.zeros(gt.dims, dtype=bool)
    for cam in cams:
        us, vs = np.meshgrid(np.arange(0, cam.width, pixel_stride, dtype=float),
                             np.arange(0, cam.height, pixel_stride, dtype=float),
                             indexing="xy")
        dirs = cam.pixel_rays(us.ravel(), vs.ravel())
        mark_visible(gt, cam.center.reshape(1, 3), dirs, rng, taxonomy.free_id, visible)
    return visible
