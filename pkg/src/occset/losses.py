"""Training objective pieces: re-weighted focal loss, initial points, point
refinement and the summed multi-stage loss."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import LabeledPointSet, SceneConfig, StageSchedule
from .errors import (
    CountNotRepresentable,
    LengthMismatch,
    MissingLabels,
    ProbabilityOutOfRange,
    ScheduleViolation,
    ShapeMismatch,
)
from .matching import WeightFn, assign_labels, chamfer_distance_reweighted
from .matching.nn_index import build_nn_index


@dataclass(frozen=True)
class ClassWeights:
    weights: Tuple[float, ...]
    gamma: float = 2.0

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if not w or min(w) <= 0 or not all(math.isfinite(x) for x in w):
            raise ValueError("class weights must be positive and finite")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")

    @classmethod
    def uniform(cls, num_classes: int, gamma: float = 2.0) -> "ClassWeights":
        return cls((1.0,) * num_classes, gamma)

    @classmethod
    def from_json(cls, source) -> "ClassWeights":
        """Load ``{"gamma": g, "weights": [...]}`` from a path or a dict."""
        if isinstance(source, (str, Path)):
            source = json.loads(Path(source).read_text())
        return cls(tuple(source["weights"]), float(source.get("gamma", 2.0)))

    def to_json(self) -> dict:
        return {"gamma": self.gamma, "weights": list(self.weights)}

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)


def focal_loss_reweighted(scores, targets, w: ClassWeights) -> float:
    """Mean of ``w[t] * (1 - p_t)**gamma * -log(p_t)`` over points.

    ``scores`` are per-class probabilities, shape (points, classes).
    """
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if s.ndim != 2:
        raise ShapeMismatch(f"scores must be (points, classes), got {s.shape}")
    if s.shape[0] != t.shape[0]:
        raise LengthMismatch(f"{s.shape[0]} score rows but {t.shape[0]} targets")
    if s.shape[0] == 0:
        return 0.0
    if not ((s >= 0) & (s <= 1)).all():
        raise ProbabilityOutOfRange("class scores must lie in [0, 1]")
    cw = w.array
    if s.shape[1] > cw.shape[0] or t.max() >= cw.shape[0] or t.min() < 0:
        raise ShapeMismatch(f"{cw.shape[0]} class weights do not cover the targets")
    p_t = s[np.arange(len(t)), t]
    with np.errstate(divide="ignore"):
        nll = -np.log(p_t)
    mod = (1.0 - p_t) ** w.gamma
    return float(np.mean(cw[t] * mod * nll))


def _grid_factors(count: int, wide_x: bool) -> Tuple[int, int]:
    a = int(math.isqrt(count))
    while count % a:
        a -= 1
    b = count // a
    if b > 2 * a:
        raise CountNotRepresentable(
            f"{count} points do not form a near-square BEV grid (best {a}x{b})")
    return (b, a) if wide_x else (a, b)


def init_points(strategy: str, cfg: SceneConfig, count: int) -> LabeledPointSet:
    """Initial point locations.

    ``grid``: pillar centers of an evenly divided BEV grid at mid-height,
    x varying fastest. ``random``: i.i.d. uniform in the ROI from ``cfg.seed``.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    lo = np.asarray(cfg.roi_min)
    hi = np.asarray(cfg.roi_max)
    if strategy == "grid":
        nx, ny = _grid_factors(count, hi[0] - lo[0] >= hi[1] - lo[1])
        xs = lo[0] + (np.arange(nx) + 0.5) * (hi[0] - lo[0]) / nx
        ys = lo[1] + (np.arange(ny) + 0.5) * (hi[1] - lo[1]) / ny
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        z = np.full(gx.size, 0.5 * (lo[2] + hi[2]))
        return LabeledPointSet(np.stack([gx.ravel(), gy.ravel(), z], axis=1))
    if strategy == "random":
        rng = np.random.default_rng(cfg.seed)
        return LabeledPointSet(rng.uniform(lo, hi, size=(count, 3)))
    raise ValueError(f"unknown init strategy {strategy!r}")


def refine_points(prev_positions, offsets) -> np.ndarray:
    """Broadcast each query's mean previous position and add the new offsets.

    ``prev_positions`` is (Q, R_prev, 3), ``offsets`` is (Q, R_next, 3).
    """
    prev = np.asarray(prev_positions, dtype=np.float64)
    off = np.asarray(offsets, dtype=np.float64)
    if prev.ndim != 3 or off.ndim != 3 or prev.shape[2] != 3 or off.shape[2] != 3:
        raise ShapeMismatch("positions and offsets must be (Q, R, 3)")
    if prev.shape[0] != off.shape[0]:
        raise ShapeMismatch(f"{prev.shape[0]} queries vs {off.shape[0]} offset rows")
    if prev.shape[1] > off.shape[1]:
        raise ScheduleViolation(
            f"points per query would shrink from {prev.shape[1]} to {off.shape[1]}")
    return prev.mean(axis=1, keepdims=True) + off


@dataclass(frozen=True)
class StagePrediction:
    stage_index: int
    positions: np.ndarray                 # (Q, R_i, 3)
    class_scores: Optional[np.ndarray] = None   # (Q, R_i, N); None at stage 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim == 2:
            pos = pos[:, None, :]
        if pos.ndim != 3 or pos.shape[2] != 3:
            raise ShapeMismatch(f"stage positions must be (Q, R, 3), got {pos.shape}")
        object.__setattr__(self, "positions", pos)
        if self.stage_index == 0 and self.class_scores is not None:
            raise ShapeMismatch("stage 0 carries positions only")
        if self.class_scores is not None:
            sc = np.asarray(self.class_scores, dtype=np.float64)
            if sc.ndim == 2:
                sc = sc.reshape(pos.shape[0], pos.shape[1], -1)
            if sc.shape[:2] != pos.shape[:2]:
                raise ShapeMismatch(
                    f"scores {sc.shape} do not match positions {pos.shape}")
            if not ((sc >= 0) & (sc <= 1)).all():
                raise ProbabilityOutOfRange("class scores must lie in [0, 1]")
            object.__setattr__(self, "class_scores", sc)

    @property
    def flat_positions(self) -> np.ndarray:
        return self.positions.reshape(-1, 3)

    @property
    def flat_scores(self) -> np.ndarray:
        return self.class_scores.reshape(-1, self.class_scores.shape[-1])


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    terms: List[Tuple[str, float]]

    def as_dict(self) -> dict:
        return {"total": self.total, "terms": dict(self.terms)}


def check_schedule(stages: Sequence[StagePrediction], schedule: StageSchedule) -> None:
    if len(stages) != len(schedule.points_per_stage):
        raise ScheduleViolation(
            f"{len(stages)} stages given, schedule defines {len(schedule.points_per_stage)}")
    for st in stages:
        q, r = st.positions.shape[:2]
        want = schedule.points_per_stage[st.stage_index]
        if q != schedule.query_count or r != want:
            raise ScheduleViolation(
                f"stage {st.stage_index} has {q}x{r} points, schedule expects "
                f"{schedule.query_count}x{want}")


def total_loss(stages: Sequence[StagePrediction], gt: LabeledPointSet,
               w: WeightFn = WeightFn(), cw: Optional[ClassWeights] = None,
               schedule: Optional[StageSchedule] = None,
               cell_size: Optional[float] = None) -> LossBreakdown:
    """Stage-0 Chamfer term plus, for every decoder stage, Chamfer + focal.

    Focal targets come from nearest-neighbor label assignment against ``gt``.
    The returned total is the left-to-right sum of the listed terms.
    """
    if gt.classes is None:
        raise MissingLabels("ground truth must be labeled")
    stages = sorted(stages, key=lambda s: s.stage_index)
    if not stages or stages[0].stage_index != 0:
        raise ScheduleViolation("stage 0 must be present")
    idx = [s.stage_index for s in stages]
    if idx != list(range(len(stages))):
        raise ScheduleViolation(f"stage indices must be contiguous from 0, got {idx}")
    for prev, cur in zip(stages, stages[1:]):
        if prev.positions.shape[1] > cur.positions.shape[1]:
            raise ScheduleViolation(
                f"stage {cur.stage_index} has fewer points per query than stage {prev.stage_index}")
    if schedule is not None:
        check_schedule(stages, schedule)

    gt_index = build_nn_index(gt.positions, cell_size)
    terms: List[Tuple[str, float]] = []
    for st in stages:
        pts = st.flat_positions
        cd, _ = chamfer_distance_reweighted(pts, gt.positions, w, cell_size, gt_index=gt_index)
        terms.append((f"cd_r[{st.stage_index}]", cd))
        if st.stage_index == 0:
            continue
        if st.class_scores is None:
            raise MissingLabels(f"stage {st.stage_index} has no class scores")
        targets = assign_labels(pts, gt, cell_size, gt_index=gt_index)
        scores = st.flat_scores
        weights = cw if cw is not None else ClassWeights.uniform(scores.shape[1])
        terms.append((f"focal_r[{st.stage_index}]",
                      focal_loss_reweighted(scores, targets, weights)))
    total = 0.0
    for _, v in terms:
        total += v
    return LossBreakdown(total, terms)

