"""Chamfer matching between predicted and ground-truth point sets.

Locations are compared with L1 nearest-neighbor distances; classes are
transferred along L2 nearest neighbors. Both searches go through
:class:`NnIndex`, so every result matches a brute-force scan exactly,
lowest index winning ties.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..core import LabeledPointSet, as_point_array
from ..errors import EmptySet, MissingLabels
from .nn_index import L1, L2, NnIndex, build_nn_index


@dataclass(frozen=True)
class WeightFn:
    """Step weight: ``high_weight`` when ``d >= threshold``, else ``low_weight``."""

    threshold: float = 0.2
    high_weight: float = 5.0
    low_weight: float = 1.0

    def __call__(self, d):
        d = np.asarray(d, dtype=np.float64)
        return np.where(d >= self.threshold, self.high_weight, self.low_weight)

    @classmethod
    def unit(cls) -> "WeightFn":
        return cls(0.0, 1.0, 1.0)

    @classmethod
    def parse(cls, text: str) -> "WeightFn":
        """Parse ``"d0,w_hi,w_lo"``."""
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected d0,w_hi,w_lo, got {text!r}")
        return cls(*parts)


@dataclass(frozen=True)
class MatchReport:
    cd_value: float
    pred_nn_index: np.ndarray
    pred_nn_dist: np.ndarray
    gt_nn_index: np.ndarray
    gt_nn_dist: np.ndarray
    assigned_classes: Optional[np.ndarray]

    @property
    def per_pred_nn(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.pred_nn_index, self.pred_nn_dist

    @property
    def per_gt_nn(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.gt_nn_index, self.gt_nn_dist


def _nonempty(*sets):
    for s in sets:
        if len(as_point_array(s)) == 0:
            raise EmptySet("matching needs non-empty point sets")


def _index(points, cell_size, given: Optional[NnIndex]) -> NnIndex:
    if given is not None:
        return given
    return build_nn_index(points, cell_size)


def _bidirectional_l1(pred, gt, cell_size=None, pred_index=None, gt_index=None):
    p = as_point_array(pred)
    g = as_point_array(gt)
    gi = _index(g, cell_size, gt_index)
    pi = _index(p, cell_size, pred_index)
    p_idx, p_d = gi.query(p, L1)
    g_idx, g_d = pi.query(g, L1)
    return p_idx, p_d, g_idx, g_d


def _report(value, gt, p_idx, p_d, g_idx, g_d) -> MatchReport:
    assigned = None
    if isinstance(gt, LabeledPointSet) and gt.classes is not None:
        assigned = gt.classes[p_idx]
    return MatchReport(float(value), p_idx, p_d, g_idx, g_d, assigned)


def chamfer_distance(pred, gt, cell_size: Optional[float] = None, *,
                     pred_index: Optional[NnIndex] = None,
                     gt_index: Optional[NnIndex] = None):
    """Symmetric L1 Chamfer distance: mean NN distance pred->gt plus gt->pred.

    Returns ``(value, MatchReport)``.
    """
    _nonempty(pred, gt)
    p_idx, p_d, g_idx, g_d = _bidirectional_l1(pred, gt, cell_size, pred_index, gt_index)
    value = np.mean(p_d) + np.mean(g_d)
    return float(value), _report(value, gt, p_idx, p_d, g_idx, g_d)


def chamfer_distance_reweighted(pred, gt, w: WeightFn = WeightFn(),
                                cell_size: Optional[float] = None, *,
                                pred_index: Optional[NnIndex] = None,
                                gt_index: Optional[NnIndex] = None):
    """Chamfer distance where every NN distance ``d`` is scaled by ``w(d)``."""
    _nonempty(pred, gt)
    p_idx, p_d, g_idx, g_d = _bidirectional_l1(pred, gt, cell_size, pred_index, gt_index)
    value = np.mean(w(p_d) * p_d) + np.mean(w(g_d) * g_d)
    return float(value), _report(value, gt, p_idx, p_d, g_idx, g_d)


def assign_labels(pred, gt: LabeledPointSet, cell_size: Optional[float] = None, *,
                  gt_index: Optional[NnIndex] = None) -> np.ndarray:
    """Class of the L2-nearest ground-truth point for every predicted point."""
    _nonempty(pred, gt)
    if not isinstance(gt, LabeledPointSet) or gt.classes is None:
        raise MissingLabels("label assignment needs ground-truth classes")
    gi = _index(gt.positions, cell_size, gt_index)
    idx, _ = gi.query(as_point_array(pred), L2)
    return gt.classes[idx].copy()


def chamfer_gradient(pred, gt, w: WeightFn = WeightFn(),
                     cell_size: Optional[float] = None) -> np.ndarray:
    """Gradient of the re-weighted Chamfer distance w.r.t. predicted positions.

    The weight is held constant (no gradient through the step) and the
    subgradient of ``|0|`` is taken as 0.
    """
    _nonempty(pred, gt)
    p = as_point_array(pred)
    g = as_point_array(gt)
    p_idx, p_d, g_idx, g_d = _bidirectional_l1(p, g, cell_size)
    grad = (w(p_d) / len(p))[:, None] * np.sign(p - g[p_idx])
    pull = (w(g_d) / len(g))[:, None] * np.sign(g - p[g_idx])
    np.add.at(grad, g_idx, -pull)
    return grad


def gradient_margin(pred, gt, w: WeightFn = WeightFn()) -> float:
    """Distance (in the loss's own units) to the nearest kink of the loss.

    Central differences with a step below this margin see a linear function.
    Covers NN switches, per-axis sign changes and weight-threshold crossings.
    """
    p = as_point_array(pred)
    g = as_point_array(gt)
    margins = []
    for a, b in ((p, g), (g, p)):
        d = np.abs(a[:, None, :] - b[None, :, :]).sum(-1)
        part = np.partition(d, 1, axis=1) if b.shape[0] > 1 else None
        nn = d.argmin(axis=1)
        if part is not None:
            margins.append(float((part[:, 1] - part[:, 0]).min()))
        margins.append(float(np.abs(a - b[nn]).min()))
        margins.append(float(np.abs(d.min(axis=1) - w.threshold).min()))
    return min(margins)


def point_margins(pred, gt, w: WeightFn = WeightFn()) -> np.ndarray:
    """Per predicted point, L1 distance to the nearest kink its coordinates touch.

    Moving one coordinate of point i by ``h`` changes every distance involving
    it by at most ``h``, so central differences of step ``h`` are exact for
    that point when its margin exceeds ``2 * h``. Brute force, O(m n) memory.
    """
    p = as_point_array(pred)
    g = as_point_array(gt)
    d = np.abs(p[:, None, :] - g[None, :, :]).sum(-1)
    out = np.full(len(p), np.inf)
    # pred -> gt term: NN gap, per-axis sign, weight threshold
    nn = d.argmin(axis=1)
    best = d[np.arange(len(p)), nn]
    if g.shape[0] > 1:
        second = np.partition(d, 1, axis=1)[:, 1]
        out = np.minimum(out, second - best)
    out = np.minimum(out, np.abs(p - g[nn]).min(axis=1))
    out = np.minimum(out, np.abs(best - w.threshold))
    # gt -> pred term: every pred point that is, or could become, some gt's NN
    g_nn = d.argmin(axis=0)
    g_best = d[g_nn, np.arange(len(g))]
    if p.shape[0] > 1:
        g_second = np.partition(d, 1, axis=0)[1]
        gap = np.where(np.arange(len(p))[:, None] == g_nn[None, :],
                       g_second[None, :] - g_best[None, :],
                       d - g_best[None, :])
        out = np.minimum(out, gap.min(axis=1))
    owner = np.zeros((len(p), len(g)), dtype=bool)
    owner[g_nn, np.arange(len(g))] = True
    axis_gap = np.abs(g[None, :, :] - p[:, None, :]).min(-1)
    thr_gap = np.abs(g_best - w.threshold)[None, :]
    out = np.minimum(out, np.where(owner, np.minimum(axis_gap, thr_gap), np.inf).min(axis=1))
    return out


def finite_difference_gradient(value_fn, pred, h: float = 1e-4) -> np.ndarray:
    """Central differences of ``value_fn(positions)`` w.r.t. every coordinate."""
    p = np.array(as_point_array(pred), dtype=np.float64)
    grad = np.empty_like(p)
    for i in range(p.shape[0]):
        for a in range(3):
            keep = p[i, a]
            p[i, a] = keep + h
            up = value_fn(p)
            p[i, a] = keep - h
            down = value_fn(p)
            p[i, a] = keep
            grad[i, a] = (up - down) / (2 * h)
    return grad
