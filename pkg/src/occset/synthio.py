"""Synthetic labeled scenes and binary point-set / voxel-grid IO.

File layouts (all little-endian):

``OPS1``  magic, u32 count, u8 has_labels, then per point 3 x f32 (x, y, z)
          followed by a u16 class id when labeled.
``OVG1``  magic, 3 x f32 origin, f32 voxel_size, 3 x u32 dims, then
          prod(dims) x u16 labels with x varying fastest.
``SCOR``  magic, u32 count, u32 num_classes, then count x num_classes f32
          scores, class index fastest.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .core import (
    DEFAULT_TAXONOMY,
    ClassTaxonomy,
    LabeledPointSet,
    SceneConfig,
    VoxelGrid,
    validate,
)
from .errors import (
    BadMagic,
    DimsOverflow,
    InvalidClassId,
    PrimitiveOutOfRoi,
    TruncatedFile,
)

OPS_MAGIC = b"OPS1"
OVG_MAGIC = b"OVG1"
_OPS_HEADER = struct.Struct("<4sIB")
_OVG_HEADER = struct.Struct("<4s3ff3I")
SCORE_MAGIC = b"SCOR"
_SCORE_HEADER = struct.Struct("<4sII")
MAX_VOXELS = 1 << 32

_OPS_LABELED = np.dtype([("xyz", "<f4", (3,)), ("cls", "<u2")])
_OPS_PLAIN = np.dtype([("xyz", "<f4", (3,))])

PRIMITIVE_KINDS = ("box", "plane-slab", "sphere-shell")


@dataclass(frozen=True)
class ScenePrimitive:
    """Axis-aligned primitive. ``extents`` are full edge lengths (m).

    ``fill_density`` is in points per cubic meter; once it reaches one point
    per voxel volume every covered voxel is filled, below that voxels are kept
    at random with probability ``density * voxel_volume``.
    """

    kind: str
    center: Tuple[float, float, float]
    extents: Tuple[float, float, float]
    class_id: int
    fill_density: float = 1000.0

    def __post_init__(self):
        if self.kind not in PRIMITIVE_KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "extents", tuple(float(v) for v in self.extents))
        if len(self.center) != 3 or len(self.extents) != 3:
            raise ValueError("center and extents must be 3D")
        if min(self.extents) <= 0:
            raise ValueError(f"extents must be positive, got {self.extents}")
        if not self.fill_density > 0:
            raise ValueError("fill_density must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenePrimitive":
        return cls(d["kind"], tuple(d["center"]), tuple(d["extents"]), int(d["class_id"]),
                   float(d.get("fill_density", 1000.0)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": list(self.center), "extents": list(self.extents),
                "class_id": self.class_id, "fill_density": self.fill_density}

    @property
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        h = np.asarray(self.extents) / 2
        return c - h, c + h


def load_primitives(path) -> List[ScenePrimitive]:
    """Read a JSON list of primitives (or ``{"primitives": [...]}``)."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = doc["primitives"]
    if not isinstance(doc, list):
        raise ValueError("primitives document must be a list")
    return [ScenePrimitive.from_dict(d) for d in doc]


def _coverage(prim: ScenePrimitive, centers: np.ndarray, vs: float) -> np.ndarray:
    lo, hi = prim.bounds
    eps = 1e-9 * max(1.0, float(np.abs(centers).max(initial=0.0)))
    if prim.kind == "box":
        # half-open, like voxel indexing: an edge of k voxels covers k centers
        return np.all((centers >= lo - eps) & (centers < hi - eps), axis=-1)
    if prim.kind == "plane-slab":
        # voxels overlapping the slab, so thin slabs still occupy one layer
        half = vs / 2
        return np.all((centers + half > lo + eps) & (centers - half < hi - eps), axis=-1)
    # sphere-shell: surface layer of the solid ellipsoid
    c = np.asarray(prim.center)
    semi = np.asarray(prim.extents) / 2

    def inside(p):
        return (((p - c) / semi) ** 2).sum(-1) <= 1.0 + 1e-12

    solid = inside(centers)
    surface = np.zeros_like(solid)
    for axis in range(3):
        for sgn in (-1.0, 1.0):
            nb = centers.copy()
            nb[..., axis] += sgn * vs
            surface |= ~inside(nb)
    return solid & surface


def generate_scene(primitives: Sequence[ScenePrimitive],
                   cfg: SceneConfig) -> Tuple[LabeledPointSet, VoxelGrid]:
    """Rasterize primitives into a labeled grid; later primitives overwrite earlier.

    The point set holds the centers of occupied voxels in x-fastest order.
    """
    tax = cfg.taxonomy
    roi_lo = np.asarray(cfg.roi_min)
    roi_hi = np.asarray(cfg.roi_max)
    for k, prim in enumerate(primitives):
        lo, hi = prim.bounds
        if np.any(lo < roi_lo - 1e-9) or np.any(hi > roi_hi + 1e-9):
            raise PrimitiveOutOfRoi(f"primitive {k} ({prim.kind}) leaves the ROI")
        if not 0 <= prim.class_id < tax.num_semantic:
            raise InvalidClassId(f"primitive {k} has class {prim.class_id}")
    grid = VoxelGrid.from_config(cfg)
    labels = np.array(grid.labels)
    vs = cfg.voxel_size
    rng = np.random.default_rng(cfg.seed)
    for prim in primitives:
        lo, hi = prim.bounds
        i0 = np.maximum(grid.index_of(lo) - 1, 0)
        i1 = np.minimum(grid.index_of(hi) + 2, np.asarray(grid.dims))
        ii, jj, kk = np.meshgrid(*(np.arange(a, b) for a, b in zip(i0, i1)), indexing="ij")
        ijk = np.stack([ii, jj, kk], axis=-1)
        cover = _coverage(prim, grid.centers(ijk), vs)
        keep_p = prim.fill_density * vs ** 3
        if keep_p < 1.0:
            cover &= rng.random(cover.shape) < keep_p
        sub = labels[i0[0]:i1[0], i0[1]:i1[1], i0[2]:i1[2]]
        sub[cover] = prim.class_id
    out = grid.with_labels(labels)
    return grid_to_points(out, tax), out


def grid_to_points(grid: VoxelGrid, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> LabeledPointSet:
    """Centers and classes of every occupied voxel, x varying fastest."""
    flat = grid.labels.ravel(order="F")
    occ = np.flatnonzero(flat != taxonomy.free_id)
    ijk = np.stack(np.unravel_index(occ, grid.dims, order="F"), axis=1)
    return LabeledPointSet(grid.centers(ijk), flat[occ].astype(np.int64))


def perturb(gt: LabeledPointSet, noise_std: float, drop_frac: float = 0.0,
            class_flip_frac: float = 0.0, seed: int = 0,
            taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> LabeledPointSet:
    """Jitter, thin out and relabel a point set to fake a prediction."""
    for name, v in (("drop_frac", drop_frac), ("class_flip_frac", class_flip_frac)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    rng = np.random.default_rng(seed)
    n = len(gt)
    pos = gt.positions.copy()
    if noise_std > 0:
        pos += rng.normal(0.0, noise_std, size=pos.shape)
    keep = np.ones(n, dtype=bool)
    n_drop = int(round(drop_frac * n))
    if n_drop:
        keep[rng.choice(n, size=n_drop, replace=False)] = False
    cls = None if gt.classes is None else gt.classes.copy()
    if cls is not None and class_flip_frac > 0 and taxonomy.num_semantic > 1:
        n_flip = int(round(class_flip_frac * n))
        idx = rng.choice(n, size=n_flip, replace=False)
        # uniform over the other classes: shift by 1..N-1
        shift = rng.integers(1, taxonomy.num_semantic, size=n_flip)
        cls[idx] = (cls[idx] + shift) % taxonomy.num_semantic
    return LabeledPointSet(pos[keep], None if cls is None else cls[keep])


# ---- OPS1 -----------------------------------------------------------------

def ops_bytes(points: LabeledPointSet, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> bytes:
    validate(points, taxonomy)
    labeled = points.classes is not None
    rec = np.zeros(len(points), dtype=_OPS_LABELED if labeled else _OPS_PLAIN)
    rec["xyz"] = points.positions.astype("<f4")
    if labeled:
        rec["cls"] = points.classes.astype("<u2")
    return _OPS_HEADER.pack(OPS_MAGIC, len(points), int(labeled)) + rec.tobytes()


def write_ops(path, points: LabeledPointSet,
              taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> None:
    Path(path).write_bytes(ops_bytes(points, taxonomy))


def parse_ops(raw: bytes, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY,
              name: str = "<bytes>") -> LabeledPointSet:
    if raw[:4] != OPS_MAGIC:
        raise BadMagic(f"{name}: expected OPS1 magic, found {raw[:4]!r}")
    if len(raw) < _OPS_HEADER.size:
        raise TruncatedFile(f"{name}: header truncated")
    _, count, labeled = _OPS_HEADER.unpack_from(raw)
    dt = _OPS_LABELED if labeled else _OPS_PLAIN
    need = _OPS_HEADER.size + count * dt.itemsize
    if len(raw) < need:
        have = (len(raw) - _OPS_HEADER.size) // dt.itemsize
        raise TruncatedFile(f"{name}: header says {count} points, file holds {have}")
    rec = np.frombuffer(raw, dtype=dt, count=count, offset=_OPS_HEADER.size)
    pos = rec["xyz"].astype(np.float64)
    cls = rec["cls"].astype(np.int64) if labeled else None
    if cls is not None and len(cls) and cls.max() >= taxonomy.num_semantic:
        raise InvalidClassId(f"{name}: class id {int(cls.max())} is not a semantic class")
    return LabeledPointSet(pos, cls)


def read_ops(path, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> LabeledPointSet:
    return parse_ops(Path(path).read_bytes(), taxonomy, str(path))


# ---- OVG1 -----------------------------------------------------------------

def ovg_bytes(grid: VoxelGrid) -> bytes:
    if np.prod(np.asarray(grid.dims, dtype=np.float64)) > MAX_VOXELS:
        raise DimsOverflow(f"grid dims {grid.dims} exceed {MAX_VOXELS} voxels")
    head = _OVG_HEADER.pack(OVG_MAGIC, *grid.origin.astype(np.float32).tolist(),
                            float(np.float32(grid.voxel_size)), *grid.dims)
    return head + grid.labels.ravel(order="F").astype("<u2").tobytes()


def write_grid(path, grid: VoxelGrid) -> None:
    Path(path).write_bytes(ovg_bytes(grid))


def parse_grid(raw: bytes, name: str = "<bytes>") -> VoxelGrid:
    if raw[:4] != OVG_MAGIC:
        raise BadMagic(f"{name}: expected OVG1 magic, found {raw[:4]!r}")
    if len(raw) < _OVG_HEADER.size:
        raise TruncatedFile(f"{name}: header truncated")
    _, ox, oy, oz, vs, nx, ny, nz = _OVG_HEADER.unpack_from(raw)
    total = nx * ny * nz
    if total > MAX_VOXELS:
        raise DimsOverflow(f"{name}: dims {nx}x{ny}x{nz} exceed {MAX_VOXELS} voxels")
    if total == 0:
        raise ValueError(f"{name}: grid has a zero dimension")
    need = _OVG_HEADER.size + 2 * total
    if len(raw) < need:
        raise TruncatedFile(f"{name}: expected {need} bytes, found {len(raw)}")
    lab = np.frombuffer(raw, dtype="<u2", count=total, offset=_OVG_HEADER.size)
    origin = np.array([ox, oy, oz], dtype=np.float32).astype(np.float64)
    return VoxelGrid(origin, float(np.float32(vs)), lab.reshape((nx, ny, nz), order="F"))


def read_grid(path) -> VoxelGrid:
    return parse_grid(Path(path).read_bytes(), str(path))


# ---- SCOR -----------------------------------------------------------------

def score_bytes(scores) -> bytes:
    a = np.asarray(scores, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"scores must be (count, num_classes), got shape {a.shape}")
    return _SCORE_HEADER.pack(SCORE_MAGIC, *a.shape) + a.astype("<f4").tobytes()


def write_scores(path, scores) -> None:
    Path(path).write_bytes(score_bytes(scores))


def parse_scores(raw: bytes, name: str = "<bytes>") -> np.ndarray:
    if raw[:4] != SCORE_MAGIC:
        raise BadMagic(f"{name}: expected SCOR magic, found {raw[:4]!r}")
    if len(raw) < _SCORE_HEADER.size:
        raise TruncatedFile(f"{name}: header truncated")
    _, count, ncls = _SCORE_HEADER.unpack_from(raw)
    need = _SCORE_HEADER.size + 4 * count * ncls
    if len(raw) < need:
        raise TruncatedFile(f"{name}: expected {need} bytes, found {len(raw)}")
    a = np.frombuffer(raw, dtype="<f4", count=count * ncls, offset=_SCORE_HEADER.size)
    return a.reshape(count, ncls).astype(np.float64)


def read_scores(path) -> np.ndarray:
    return parse_scores(Path(path).read_bytes(), str(path))


# ---- CSV ------------------------------------------------------------------

def write_csv(path, points: LabeledPointSet) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "z", "class"])
        cls = points.classes
        for i, (x, y, z) in enumerate(points.positions.tolist()):
            w.writerow([repr(x), repr(y), repr(z), "" if cls is None else int(cls[i])])


def read_csv(path) -> LabeledPointSet:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    pos = [[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows]
    labeled = bool(rows) and all(r.get("class", "") != "" for r in rows)
    cls = [int(r["class"]) for r in rows] if labeled else None
    return LabeledPointSet(np.asarray(pos, dtype=np.float64).reshape(-1, 3), cls)


def read_points(path, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> LabeledPointSet:
    """Dispatch on extension: ``.csv`` or OPS1 otherwise."""
    if str(path).endswith(".csv"):
        return read_csv(path)
    return read_ops(path, taxonomy)
