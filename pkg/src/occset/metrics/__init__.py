"""Occupancy evaluation: voxelization, mIoU, RayIoU, visibility masks."""

from .raycast import RAY_PRESETS, RayHit, RaySet, cast_ray, cast_rays, mark_visible
from .scores import (
    DEFAULT_THRESHOLDS,
    MiouReport,
    RayIouReport,
    miou,
    rayiou,
    visibility_mask,
    voxelize,
)

__all__ = [
    "DEFAULT_THRESHOLDS", "MiouReport", "RAY_PRESETS", "RayHit", "RayIouReport",
    "RaySet", "cast_ray", "cast_rays", "mark_visible", "miou", "rayiou",
    "visibility_mask", "voxelize",
]
