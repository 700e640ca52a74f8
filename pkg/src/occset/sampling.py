"""Consistent point sampling: query-conditioned 3D samples, projection into
camera feature maps, visibility masking and weighted bilinear aggregation.

Pixel (0, 0) is the center of the top-left pixel; feature maps are stored
H x W x C and indexed ``data[row, col]`` with ``x`` along columns.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

from .errors import BadMagic, OutOfBounds, ShapeMismatch, TruncatedFile

FMAP_MAGIC = b"FMAP"
_FMAP_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class CameraModel:
    projection: np.ndarray   # 3x4, or 4x4 whose first three rows are used
    width: int
    height: int

    def __post_init__(self):
        p = np.asarray(self.projection, dtype=np.float64)
        if p.shape not in ((3, 4), (4, 4)):
            raise ShapeMismatch(f"projection must be 3x4 or 4x4, got {p.shape}")
        if not np.isfinite(p).all():
            raise ValueError("projection contains non-finite entries")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "projection", p[:3])

    @classmethod
    def from_intrinsics(cls, K, R, t, width: int, height: int) -> "CameraModel":
        """Build ``K [R | t]`` from intrinsics and a world-to-camera pose."""
        Rt = np.hstack([np.asarray(R, float), np.asarray(t, float).reshape(3, 1)])
        return cls(np.asarray(K, float) @ Rt, width, height)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(np.asarray(d["projection"], float), int(d["width"]), int(d["height"]))

    def to_dict(self) -> dict:
        return {"projection": self.projection.tolist(), "width": self.width,
                "height": self.height}

    @property
    def center(self) -> np.ndarray:
        """Camera center in scene coordinates (null vector of the projection)."""
        M = self.projection[:, :3]
        return -np.linalg.solve(M, self.projection[:, 3])

    def pixel_rays(self, us, vs) -> np.ndarray:
        """Unit directions through pixel coordinates, pointing to positive depth."""
        M = self.projection[:, :3]
        pix = np.stack([np.asarray(us, float), np.asarray(vs, float),
                        np.ones(np.size(us))], axis=0)
        d = np.linalg.solve(M, pix).T
        # depth of c + t d is t * (M d)_z = t for these rays, so d already faces forward
        return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray   # H x W x C

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or min(a.shape) < 1:
            raise ShapeMismatch(f"feature map must be H x W x C, got {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError("feature map contains non-finite values")
        object.__setattr__(self, "data", a)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class SampleContext:
    point_mean: np.ndarray    # (3,)
    point_std: np.ndarray     # (3,) per-axis
    offsets: np.ndarray       # (S, 3)
    weights: np.ndarray       # (S, M)

    def __post_init__(self):
        m = np.asarray(self.point_mean, float).reshape(3)
        s = np.asarray(self.point_std, float).reshape(3)
        off = np.asarray(self.offsets, float).reshape(-1, 3)
        w = np.asarray(self.weights, float)
        if w.ndim == 1:
            w = w[:, None]
        if (s < 0).any():
            raise ValueError("point_std must be non-negative")
        if off.shape[0] < 1:
            raise ShapeMismatch("need at least one sample offset")
        if w.shape[0] != off.shape[0]:
            raise ShapeMismatch(f"{off.shape[0]} offsets but {w.shape[0]} weight rows")
        if not np.isfinite(w).all():
            raise ValueError("sample weights must be finite")
        for name, v in (("point_mean", m), ("point_std", s), ("offsets", off), ("weights", w)):
            object.__setattr__(self, name, v)

    @classmethod
    def from_points(cls, points, offsets, weights) -> "SampleContext":
        """Mean and per-axis (population) std of the R points of one query."""
        p = np.asarray(points, float).reshape(-1, 3)
        return cls(p.mean(axis=0), p.std(axis=0), offsets, weights)


def compute_sample_points(ctx: SampleContext, sigma_min=0.2) -> np.ndarray:
    """``mean + offset * max(std, sigma_min)`` per axis; returns (S, 3)."""
    sigma = np.maximum(ctx.point_std, np.asarray(sigma_min, float))
    return ctx.point_mean + ctx.offsets * sigma


def project_and_mask(points, cams: Sequence[CameraModel]) -> Tuple[np.ndarray, np.ndarray]:
    """Project (S, 3) points into every camera.

    Returns pixel coordinates (S, M, 2) and a visibility mask (S, M): depth
    must be positive and the pixel inside ``[0, W-1] x [0, H-1]``. Coordinates
    of points at zero depth are NaN.
    """
    pts = np.asarray(points, float).reshape(-1, 3)
    hom = np.hstack([pts, np.ones((pts.shape[0], 1))])
    coords = np.empty((pts.shape[0], len(cams), 2))
    mask = np.zeros((pts.shape[0], len(cams)), dtype=bool)
    for m, cam in enumerate(cams):
        h = hom @ cam.projection.T
        depth = h[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            xy = h[:, :2] / depth[:, None]
        xy[depth == 0] = np.nan
        coords[:, m] = xy
        inside = ((xy[:, 0] >= 0) & (xy[:, 0] <= cam.width - 1)
                  & (xy[:, 1] >= 0) & (xy[:, 1] <= cam.height - 1))
        mask[:, m] = (depth > 0) & inside
    return coords, mask


def bilinear(fm: FeatureMap, coord) -> np.ndarray:
    """Four-neighbor bilinear interpolation of the C-vector at pixel ``(x, y)``."""
    x, y = (float(c) for c in coord)
    if not (0 <= x <= fm.width - 1 and 0 <= y <= fm.height - 1):
        raise OutOfBounds(f"pixel ({x}, {y}) outside {fm.width}x{fm.height} map")
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, fm.width - 1)
    y1 = min(y0 + 1, fm.height - 1)
    fx = x - x0
    fy = y - y0
    d = fm.data
    top = d[y0, x0] * (1 - fx) + d[y0, x1] * fx
    bot = d[y1, x0] * (1 - fx) + d[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def aggregate_features(fms: Sequence[FeatureMap], coords, masks, weights) -> np.ndarray:
    """Visibility-normalized weighted sum of bilinear samples over (s, m).

    Sums in fixed s-major order; returns zeros when nothing is visible.
    """
    coords = np.asarray(coords, float)
    masks = np.asarray(masks, bool)
    weights = np.asarray(weights, float)
    M = len(fms)
    if M == 0:
        raise ShapeMismatch("need at least one feature map")
    C = fms[0].channels
    if any(f.channels != C for f in fms):
        raise ShapeMismatch("feature maps disagree on channel count")
    S = masks.shape[0]
    if masks.shape != (S, M) or weights.shape != (S, M) or coords.shape != (S, M, 2):
        raise ShapeMismatch(
            f"expected coords (S,M,2), masks/weights (S,M) with M={M}; got "
            f"{coords.shape}, {masks.shape}, {weights.shape}")
    visible = int(masks.sum())
    out = np.zeros(C)
    if visible == 0:
        return out
    for s in range(S):
        for m in range(M):
            if masks[s, m]:
                out += weights[s, m] * bilinear(fms[m], coords[s, m])
    return out / visible


def write_fmap(path, fm: FeatureMap) -> None:
    d = fm.data.astype("<f4")
    with open(path, "wb") as f:
        f.write(_FMAP_HEADER.pack(FMAP_MAGIC, fm.width, fm.height, fm.channels))
        f.write(np.ascontiguousarray(d).tobytes())


def read_fmap(path) -> FeatureMap:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != FMAP_MAGIC:
        raise BadMagic(f"{path}: not an FMAP file")
    if len(raw) < _FMAP_HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    _, w, h, c = _FMAP_HEADER.unpack_from(raw)
    need = _FMAP_HEADER.size + 4 * w * h * c
    if len(raw) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=w * h * c, offset=_FMAP_HEADER.size)
    return FeatureMap(data.reshape(h, w, c).astype(np.float64))
