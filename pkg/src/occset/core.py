"""Domain types shared by all modules: taxonomy, point sets, voxel grids, schedules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import (
    InvalidClassId,
    LengthMismatch,
    NonFiniteCoordinate,
    ScheduleViolation,
)

OCC3D_CLASS_NAMES = (
    "others", "barrier", "bicycle", "bus", "car", "construction_vehicle",
    "motorcycle", "pedestrian", "traffic_cone", "trailer", "truck",
    "driveable_surface", "other_flat", "sidewalk", "terrain", "manmade",
    "vegetation",
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ClassTaxonomy:
    """Semantic ids are ``0..num_semantic-1``; ``free_id`` marks empty space."""

    num_semantic: int = 17
    free_id: Optional[int] = None
    names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.num_semantic < 1:
            raise ValueError(f"num_semantic must be >= 1, got {self.num_semantic}")
        if self.free_id is None:
            object.__setattr__(self, "free_id", self.num_semantic)
        if 0 <= self.free_id < self.num_semantic:
            raise ValueError(f"free_id {self.free_id} collides with a semantic id")
        if self.free_id < 0 or self.free_id > 0xFFFF:
            raise ValueError(f"free_id {self.free_id} does not fit in 16 bits")
        if self.names is not None:
            names = tuple(self.names)
            if len(names) != self.num_semantic:
                raise ValueError("names must list one entry per semantic class")
            object.__setattr__(self, "names", names)

    def name(self, class_id: int) -> str:
        if class_id == self.free_id:
            return "free"
        if self.names is not None:
            return self.names[class_id]
        return str(class_id)

    def is_semantic(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        return (ids >= 0) & (ids < self.num_semantic)


DEFAULT_TAXONOMY = ClassTaxonomy(17, names=OCC3D_CLASS_NAMES)


class LabeledPointSet:
    """Unordered 3D points (meters) with optional per-point class ids.

    Construction only normalizes array shapes; use :func:`validate` to check
    the invariants against a taxonomy.
    """

    __slots__ = ("positions", "classes")

    def __init__(self, positions, classes=None):
        pos = np.array(positions, dtype=np.float64, copy=True)
        if pos.size == 0:
            pos = pos.reshape(0, 3)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must have shape (n, 3), got {pos.shape}")
        object.__setattr__(self, "positions", _frozen(pos))
        if classes is not None:
            cls = np.array(classes, dtype=np.int64, copy=True).reshape(-1)
            classes = _frozen(cls)
        object.__setattr__(self, "classes", classes)

    def __setattr__(self, name, value):
        raise AttributeError("LabeledPointSet is immutable")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __repr__(self) -> str:
        lab = "labeled" if self.classes is not None else "unlabeled"
        return f"LabeledPointSet(n={len(self)}, {lab})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledPointSet):
            return NotImplemented
        if (self.classes is None) != (other.classes is None):
            return False
        if not np.array_equal(self.positions, other.positions):
            return False
        return self.classes is None or np.array_equal(self.classes, other.classes)

    __hash__ = None

    @property
    def has_labels(self) -> bool:
        return self.classes is not None

    def subset(self, index) -> "LabeledPointSet":
        cls = None if self.classes is None else self.classes[index]
        return LabeledPointSet(self.positions[index], cls)


def validate(points: LabeledPointSet, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> None:
    """Raise if ``points`` breaks a LabeledPointSet invariant; return None if ok."""
    if points.classes is not None:
        if len(points.classes) != len(points):
            raise LengthMismatch(
                f"{len(points)} positions but {len(points.classes)} class ids")
        bad = ~taxonomy.is_semantic(points.classes)
        if bad.any():
            first = int(points.classes[np.argmax(bad)])
            raise InvalidClassId(
                f"class id {first} outside 0..{taxonomy.num_semantic - 1}")
    if not np.isfinite(points.positions).all():
        raise NonFiniteCoordinate("point set contains NaN or infinite coordinates")


class VoxelGrid:
    """Dense axis-aligned grid; ``labels[i, j, k]`` holds the class of voxel (i, j, k)."""

    __slots__ = ("origin", "voxel_size", "dims", "labels")

    def __init__(self, origin, voxel_size: float, labels):
        org = np.array(origin, dtype=np.float64).reshape(3)
        if not voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {voxel_size}")
        lab = np.array(labels, dtype=np.uint16, copy=True)
        if lab.ndim != 3 or min(lab.shape) < 1:
            raise ValueError(f"labels must be a non-empty 3D array, got {lab.shape}")
        object.__setattr__(self, "origin", _frozen(org))
        object.__setattr__(self, "voxel_size", float(voxel_size))
        object.__setattr__(self, "dims", tuple(int(d) for d in lab.shape))
        object.__setattr__(self, "labels", _frozen(lab))

    def __setattr__(self, name, value):
        raise AttributeError("VoxelGrid is immutable")

    def __repr__(self) -> str:
        return (f"VoxelGrid(origin={self.origin.tolist()}, voxel_size={self.voxel_size}, "
                f"dims={self.dims})")

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (self.aligned_with(other)
                and np.array_equal(self.labels, other.labels))

    __hash__ = None

    @classmethod
    def empty(cls, origin, voxel_size: float, dims, free_id: int) -> "VoxelGrid":
        return cls(origin, voxel_size, np.full(tuple(dims), free_id, dtype=np.uint16))

    @classmethod
    def from_config(cls, cfg: "SceneConfig") -> "VoxelGrid":
        return cls.empty(cfg.roi_min, cfg.voxel_size, cfg.dims, cfg.taxonomy.free_id)

    def aligned_with(self, other: "VoxelGrid") -> bool:
        return (self.dims == other.dims
                and self.voxel_size == other.voxel_size
                and np.array_equal(self.origin, other.origin))

    @property
    def upper(self) -> np.ndarray:
        return self.origin + np.asarray(self.dims) * self.voxel_size

    def centers(self, ijk) -> np.ndarray:
        """Centers of voxel indices ``ijk`` (shape (..., 3))."""
        return self.origin + (np.asarray(ijk, dtype=np.float64) + 0.5) * self.voxel_size

    def index_of(self, xyz) -> np.ndarray:
        """Integer voxel index for each point; may fall outside ``dims``."""
        return np.floor((np.asarray(xyz, dtype=np.float64) - self.origin)
                        / self.voxel_size).astype(np.int64)

    def contains_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk)
        return np.all((ijk >= 0) & (ijk < np.asarray(self.dims)), axis=-1)

    def occupied(self, free_id: int) -> np.ndarray:
        return self.labels != free_id

    def with_labels(self, labels) -> "VoxelGrid":
        return VoxelGrid(self.origin, self.voxel_size, labels)

    def validate(self, taxonomy: ClassTaxonomy) -> None:
        lab = self.labels
        bad = (lab != taxonomy.free_id) & (lab >= taxonomy.num_semantic)
        if bad.any():
            raise InvalidClassId(f"grid label {int(lab[bad][0])} is not a valid class")


@dataclass(frozen=True)
class StageSchedule:
    """Coarse-to-fine plan: ``points_per_stage[i]`` points per query at stage i."""

    query_count: int
    points_per_stage: Tuple[int, ...]
    sample_count: int = 2

    def __post_init__(self):
        pts = tuple(int(r) for r in self.points_per_stage)
        object.__setattr__(self, "points_per_stage", pts)
        if self.query_count < 1:
            raise ScheduleViolation(f"query_count must be >= 1, got {self.query_count}")
        if self.sample_count < 1:
            raise ScheduleViolation(f"sample_count must be >= 1, got {self.sample_count}")
        if len(pts) < 2:
            raise ScheduleViolation("schedule needs stage 0 and at least one decoder stage")
        if min(pts) < 1:
            raise ScheduleViolation(f"every stage needs >= 1 point per query, got {pts}")
        for i in range(1, len(pts)):
            if pts[i - 1] > pts[i]:
                raise ScheduleViolation(
                    f"points per query must not decrease: R_{i - 1}={pts[i - 1]} > R_{i}={pts[i]}")

    @property
    def num_stages(self) -> int:
        """Number of decoder stages (excluding stage 0)."""
        return len(self.points_per_stage) - 1

    def points_at(self, stage: int) -> int:
        return self.query_count * self.points_per_stage[stage]


# Stage 0 carries one point per query: R_0 <= R_1 = 1 in every configuration.
BUILTIN_SCHEDULES = {
    "opus-t": StageSchedule(600, (1, 1, 4, 16, 32, 64, 128), 4),
    "opus-s": StageSchedule(1200, (1, 1, 4, 8, 16, 32, 64), 2),
    "opus-m": StageSchedule(2400, (1, 1, 2, 4, 8, 16, 32), 2),
    "opus-l": StageSchedule(4800, (1, 1, 2, 4, 8, 16, 16), 2),
}


@dataclass(frozen=True)
class SceneConfig:
    roi_min: Tuple[float, float, float] = (-40.0, -40.0, -1.0)
    roi_max: Tuple[float, float, float] = (40.0, 40.0, 5.4)
    voxel_size: float = 0.4
    taxonomy: ClassTaxonomy = field(default_factory=lambda: DEFAULT_TAXONOMY)
    seed: int = 0

    def __post_init__(self):
        lo = tuple(float(v) for v in self.roi_min)
        hi = tuple(float(v) for v in self.roi_max)
        object.__setattr__(self, "roi_min", lo)
        object.__setattr__(self, "roi_max", hi)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("roi bounds must be 3D")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"roi_min {lo} must be below roi_max {hi} on every axis")
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        span = (np.asarray(hi) - np.asarray(lo)) / self.voxel_size
        if np.any(np.abs(span - np.round(span)) > 1e-6):
            raise ValueError(f"roi extent {span} is not a whole number of voxels")

    @property
    def dims(self) -> Tuple[int, int, int]:
        span = (np.asarray(self.roi_max) - np.asarray(self.roi_min)) / self.voxel_size
        return tuple(int(d) for d in np.round(span))

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.roi_min, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "roi_min": list(self.roi_min),
            "roi_max": list(self.roi_max),
            "voxel_size": self.voxel_size,
            "num_semantic": self.taxonomy.num_semantic,
            "free_id": self.taxonomy.free_id,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        base = cls()
        num = d.get("num_semantic", base.taxonomy.num_semantic)
        free = d.get("free_id")
        names = OCC3D_CLASS_NAMES if num == len(OCC3D_CLASS_NAMES) else None
        return cls(
            roi_min=tuple(d.get("roi_min", base.roi_min)),
            roi_max=tuple(d.get("roi_max", base.roi_max)),
            voxel_size=float(d.get("voxel_size", base.voxel_size)),
            taxonomy=ClassTaxonomy(int(num), free, names),
            seed=int(d.get("seed", base.seed)),
        )


def as_point_array(points) -> np.ndarray:
    """Accept a LabeledPointSet or an (n, 3) array; return float64 (n, 3)."""
    if isinstance(points, LabeledPointSet):
        return points.positions
    arr = np.asarray(points, dtype=np.float64)
    return arr.reshape(-1, 3)


def stack_sets(sets: Sequence[LabeledPointSet]) -> LabeledPointSet:
    pos = np.concatenate([s.positions for s in sets], axis=0)
    if all(s.classes is not None for s in sets):
        return LabeledPointSet(pos, np.concatenate([s.classes for s in sets]))
    return LabeledPointSet(pos)
