"""Command-line entry point: ``occset <synth|match|loss|eval|bench|sample>``.

Every subcommand accepts ``--seed``, ``--threads``, ``--out`` and ``--config``.
A config file is a JSON object keyed by option name (``reweight``,
``roi_min``, ...); flags given on the command line override it. The resolved
configuration is echoed as JSON on stderr and can be fed back through
``--config`` to reproduce a run. Results go to stdout as JSON, or to ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import _threads
from .core import BUILTIN_SCHEDULES, ClassTaxonomy, SceneConfig, StageSchedule
from .errors import OccsetError

log = logging.getLogger("occset")

# keys written to the echo but never read back from a config file
_NOT_CONFIG = {"command", "config", "func"}

# must be set by a flag or the config file
_REQUIRED = {
    "synth": ("primitives", "out"),
    "match": ("pred", "gt"),
    "loss": ("stages", "gt"),
    "eval": ("pred", "gt"),
    "bench": (),
    "sample": ("fmap", "cams", "context"),
}


# ---- value parsing --------------------------------------------------------

def _floats(text, n: Optional[int] = None) -> List[float]:
    if isinstance(text, str):
        vals = [float(v) for v in text.split(",") if v.strip()]
    else:
        vals = [float(v) for v in text]
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _ints(text) -> List[int]:
    if isinstance(text, str):
        return [int(v) for v in text.split(",") if v.strip()]
    return [int(v) for v in text]


# options whose values may arrive as "a,b,c" strings or JSON lists
_LIST_OPTS = {
    "roi_min": lambda v: _floats(v, 3),
    "roi_max": lambda v: _floats(v, 3),
    "ego": lambda v: _floats(v, 3),
    "thresholds": _floats,
    "sizes": _ints,
    "methods": lambda v: v.split(",") if isinstance(v, str) else list(v),
}


def _jsonable(obj):
    """Numpy-free, NaN-free structure for ``json.dumps``."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _scene(args) -> SceneConfig:
    return SceneConfig.from_dict({
        "roi_min": args.roi_min, "roi_max": args.roi_max, "voxel_size": args.voxel_size,
        "num_semantic": args.num_semantic, "free_id": args.free_id, "seed": args.seed,
    })


def _taxonomy(args) -> ClassTaxonomy:
    return _scene(args).taxonomy


def _emit(args, doc: dict) -> None:
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=False)
    if args.out:
        Path(args.out).write_text(text + "\n")
        log.info("wrote %s", args.out)
    else:
        sys.stdout.write(text + "\n")


def _load_cameras(path):
    from .sampling import CameraModel

    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = doc["cameras"]
    cams = []
    for d in doc:
        if "projection" in d:
            cams.append(CameraModel.from_dict(d))
        else:
            cams.append(CameraModel.from_intrinsics(d["K"], d["R"], d["t"],
                                                    int(d["width"]), int(d["height"])))
    return cams


def _load_rays(source, ego, max_range):
    from .metrics import RAY_PRESETS, RaySet

    if source in RAY_PRESETS:
        return RAY_PRESETS[source](np.asarray(ego), max_range)
    path = Path(source)
    if path.suffix != ".json":
        raise ValueError(f"--rays: expected one of {sorted(RAY_PRESETS)} or a .json file, "
                         f"got {source!r}")
    doc = json.loads(path.read_text())
    return RaySet(doc["origins"], doc["directions"], float(doc.get("max_range", max_range)))


# ---- subcommands ----------------------------------------------------------

def cmd_synth(args) -> int:
    from .synthio import generate_scene, load_primitives, perturb, write_grid

    cfg = _scene(args)
    prims = load_primitives(args.primitives)
    points, grid = generate_scene(prims, cfg)
    _write_points(args.out, points, cfg.taxonomy)
    if args.grid:
        write_grid(args.grid, grid)
    occ = grid.occupied(cfg.taxonomy.free_id)
    per_class = np.bincount(grid.labels[occ].astype(np.int64), minlength=cfg.taxonomy.num_semantic)
    doc = {
        "points": len(points),
        "occupied_voxels": int(occ.sum()),
        "dims": list(grid.dims),
        "per_class": {cfg.taxonomy.name(c): int(n) for c, n in enumerate(per_class) if n},
        "outputs": {"points": args.out, "grid": args.grid},
    }
    if args.pred_out:
        pred = perturb(points, args.noise_std, args.drop_frac, args.flip_frac,
                       seed=args.seed, taxonomy=cfg.taxonomy)
        _write_points(args.pred_out, pred, cfg.taxonomy)
        doc["outputs"]["pred"] = args.pred_out
        doc["pred_points"] = len(pred)
    sys.stdout.write(json.dumps(_jsonable(doc), indent=2) + "\n")
    return 0


def _write_points(path, points, taxonomy):
    from .synthio import write_csv, write_ops

    if str(path).endswith(".csv"):
        write_csv(path, points)
    else:
        write_ops(path, points, taxonomy)


def cmd_match(args) -> int:
    from .matching import (WeightFn, assign_labels, chamfer_distance,
                           chamfer_distance_reweighted, hungarian_match, pairwise_cost)
    from .synthio import read_points

    tax = _taxonomy(args)
    pred = read_points(args.pred, tax)
    gt = read_points(args.gt, tax)
    w = WeightFn.parse(args.reweight)
    cd, _ = chamfer_distance(pred.positions, gt.positions, args.cell_size)
    cd_r, _ = chamfer_distance_reweighted(pred.positions, gt.positions, w, args.cell_size)
    doc = {"n_pred": len(pred), "n_gt": len(gt), "cd": cd, "cd_r": cd_r,
           "reweight": {"threshold": w.threshold, "high_weight": w.high_weight,
                        "low_weight": w.low_weight},
           "agreement": None}
    if gt.has_labels:
        assigned = assign_labels(pred.positions, gt, args.cell_size)
        doc["assigned_class_counts"] = {
            tax.name(c): int(n) for c, n in enumerate(np.bincount(assigned)) if n}
        if pred.has_labels:
            doc["agreement"] = float(np.mean(assigned == pred.classes))
    if args.grad:
        doc["grad"] = _grad_check(pred, gt, w, args.fd_step)
    if args.hungarian:
        t0 = time.perf_counter()
        cost = pairwise_cost(pred, gt, args.metric)
        t1 = time.perf_counter()
        res = hungarian_match(cost)
        t2 = time.perf_counter()
        doc["hungarian"] = {"metric": args.metric, "cost": res.total_cost,
                            "pairs": len(res.rows),
                            "cost_matrix_ms": (t1 - t0) * 1e3, "solve_ms": (t2 - t1) * 1e3}
    _emit(args, doc)
    return 0


_GRAD_MAX_POINTS = 2000


def _grad_check(pred, gt, w, h: float) -> dict:
    from .matching import (chamfer_distance_reweighted, chamfer_gradient,
                           finite_difference_gradient, point_margins)

    if len(pred) > _GRAD_MAX_POINTS or len(gt) > _GRAD_MAX_POINTS:
        raise ValueError(f"--grad brute-forces margins; limit is {_GRAD_MAX_POINTS} points per set")
    g = gt.positions
    value = lambda p: chamfer_distance_reweighted(p, g, w)[0]  # noqa: E731
    analytic = chamfer_gradient(pred.positions, g, w)
    numeric = finite_difference_gradient(value, pred.positions, h)
    # components of points within 2h of a kink are not expected to agree
    ok = point_margins(pred.positions, g, w) > 2 * h
    # round-off of a central difference is about eps * |f| / h; components
    # below that are indistinguishable from zero and have no relative error
    noise = 16 * np.finfo(float).eps * max(1.0, abs(value(pred.positions))) / h
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    zero = denom <= noise
    err = np.divide(np.abs(analytic - numeric), denom, out=np.zeros_like(denom), where=~zero)
    checked = err[ok]
    return {"step": h, "noise_floor": noise, "zero_components": int(zero[ok].sum()),
            "checked_points": int(ok.sum()), "skipped_points": int((~ok).sum()),
            "max_rel_error": float(checked.max()) if checked.size else None,
            "max_rel_error_all": float(err.max())}


def _parse_schedule(text: Optional[str]) -> Optional[StageSchedule]:
    """Built-in name, or ``Q:R0,R1,...[:S]``."""
    if text is None:
        return None
    if text in BUILTIN_SCHEDULES:
        return BUILTIN_SCHEDULES[text]
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ValueError(f"unknown schedule {text!r}; use one of "
                         f"{sorted(BUILTIN_SCHEDULES)} or Q:R0,R1,...[:S]")
    sample = int(parts[2]) if len(parts) == 3 else 2
    return StageSchedule(int(parts[0]), tuple(_ints(parts[1])), sample)


def load_stages(directory, schedule: Optional[StageSchedule], taxonomy: ClassTaxonomy):
    """Read ``stage_<i>.ops`` (and ``stage_<i>.scores`` for i >= 1) from a directory."""
    from .losses import StagePrediction
    from .synthio import read_ops, read_scores

    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"stage directory {d} not found")
    if schedule is not None:
        count = len(schedule.points_per_stage)
    else:
        count = 0
        while (d / f"stage_{count}.ops").exists():
            count += 1
        if count < 2:
            raise FileNotFoundError(f"{d}: need at least stage_0.ops and stage_1.ops")
    stages = []
    queries = None
    for i in range(count):
        path = d / f"stage_{i}.ops"
        if not path.exists():
            raise FileNotFoundError(f"missing stage file {path}")
        pos = read_ops(path, taxonomy).positions
        if queries is None:
            queries = schedule.query_count if schedule is not None else len(pos)
        if len(pos) % queries:
            raise OccsetError(f"{path}: {len(pos)} points is not a multiple of {queries} queries")
        pos = pos.reshape(queries, -1, 3)
        scores = None
        if i > 0:
            spath = d / f"stage_{i}.scores"
            if not spath.exists():
                raise FileNotFoundError(f"missing score file {spath}")
            scores = read_scores(spath)
            if scores.shape[0] != len(pos.reshape(-1, 3)):
                raise OccsetError(f"{spath}: {scores.shape[0]} score rows for "
                                  f"{len(pos.reshape(-1, 3))} points")
        stages.append(StagePrediction(i, pos, scores))
    return stages


def cmd_loss(args) -> int:
    from .losses import ClassWeights, total_loss
    from .matching import WeightFn
    from .synthio import read_points

    tax = _taxonomy(args)
    schedule = _parse_schedule(args.schedule)
    stages = load_stages(args.stages, schedule, tax)
    gt = read_points(args.gt, tax)
    cw = ClassWeights.from_json(args.class_weights) if args.class_weights else None
    res = total_loss(stages, gt, WeightFn.parse(args.reweight), cw, schedule, args.cell_size)
    doc = res.as_dict()
    doc["num_terms"] = len(res.terms)
    doc["stages"] = len(stages)
    _emit(args, doc)
    return 0


def cmd_eval(args) -> int:
    from .metrics import miou, rayiou, visibility_mask, voxelize
    from .synthio import read_grid, read_points

    tax = _taxonomy(args)
    gt = read_grid(args.gt)
    gt.validate(tax)
    dropped = 0
    if str(args.pred).endswith(".ovg"):
        pred = read_grid(args.pred)
    else:
        pred, dropped = voxelize(read_points(args.pred, tax), gt, tax.free_id)
    pred.validate(tax)
    mask = None
    if args.vis_mask:
        mask = visibility_mask(gt, _load_cameras(args.vis_mask), args.pixel_stride,
                               taxonomy=tax)
    rays = _load_rays(args.rays, args.ego, args.max_range)
    m = miou(pred, gt, mask, tax)
    r = rayiou(pred, gt, rays, args.thresholds, tax)
    doc = {"miou": m.as_dict(tax), "rayiou": r.as_dict(tax), "rays": args.rays,
           "visible_voxels": None if mask is None else int(mask.sum()),
           "dropped_points": dropped}
    _emit(args, doc)
    return 0


def cmd_bench(args) -> int:
    from .bench import emit_report, fit_scaling_exponents, run_matching_bench, speed_ratio

    records = run_matching_bench(args.sizes, args.repeats, args.seed, args.cutoff,
                                 args.metric, args.methods, args.threads, _scene(args))
    fits = fit_scaling_exponents(records, skip_insufficient=True)
    doc = {
        "records": [asdict(r) for r in records],
        "fits": [asdict(f) for f in fits],
        "ratios": {str(n): speed_ratio(records, n) for n in args.sizes},
    }
    if args.out:
        doc["files"] = emit_report(records, fits, args.out)
    sys.stdout.write(json.dumps(_jsonable(doc), indent=2) + "\n")
    return 0


def cmd_sample(args) -> int:
    from .sampling import (SampleContext, aggregate_features, compute_sample_points,
                           project_and_mask, read_fmap)

    cams = _load_cameras(args.cams)
    fms = [read_fmap(p) for p in args.fmap]
    if len(fms) != len(cams):
        raise ValueError(f"{len(fms)} feature maps for {len(cams)} cameras")
    ctx_doc = json.loads(Path(args.context).read_text())
    if "points" in ctx_doc:
        ctx = SampleContext.from_points(ctx_doc["points"], ctx_doc["offsets"],
                                        ctx_doc["weights"])
    else:
        ctx = SampleContext(ctx_doc["point_mean"], ctx_doc["point_std"],
                            ctx_doc["offsets"], ctx_doc["weights"])
    pts = compute_sample_points(ctx, args.sigma_min)
    coords, mask = project_and_mask(pts, cams)
    feat = aggregate_features(fms, coords, mask, ctx.weights)
    doc = {"sample_points": pts, "coords": coords, "mask": mask,
           "visible": int(mask.sum()), "feature": feat}
    _emit(args, doc)
    return 0


# ---- parser ---------------------------------------------------------------

def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1, help="worker threads for parallel kernels")
    g.add_argument("--out", default=None, help="write the JSON result here instead of stdout")
    g.add_argument("--config", default=None, help="JSON file of option values")
    g.add_argument("-v", "--verbose", action="store_true")
    s = p.add_argument_group("scene")
    s.add_argument("--roi-min", default="-40,-40,-1")
    s.add_argument("--roi-max", default="40,40,5.4")
    s.add_argument("--voxel-size", type=float, default=0.4)
    s.add_argument("--num-semantic", type=int, default=17)
    s.add_argument("--free-id", type=int, default=None)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="occset", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", parents=[common], help="generate a labeled scene")
    p.add_argument("--primitives")
    p.add_argument("--grid", default=None, help="also write the voxel grid (.ovg)")
    p.add_argument("--pred-out", default=None, help="also write a perturbed copy")
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--drop-frac", type=float, default=0.0)
    p.add_argument("--flip-frac", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", parents=[common], help="Chamfer matching between two sets")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--reweight", default="0.2,5,1", help="d0,w_hi,w_lo")
    p.add_argument("--grad", action="store_true", help="finite-difference gradient check")
    p.add_argument("--fd-step", type=float, default=1e-4)
    p.add_argument("--hungarian", action="store_true", help="also solve the assignment")
    p.add_argument("--metric", choices=("l1", "l2"), default="l1")
    p.add_argument("--cell-size", type=float, default=None)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("loss", parents=[common], help="multi-stage training loss")
    p.add_argument("--stages", help="directory of stage_<i>.ops/.scores")
    p.add_argument("--gt")
    p.add_argument("--schedule", default=None,
                   help=f"{', '.join(sorted(BUILTIN_SCHEDULES))} or Q:R0,R1,...[:S]")
    p.add_argument("--class-weights", default=None, help="JSON {gamma, weights}")
    p.add_argument("--reweight", default="0.2,5,1")
    p.add_argument("--cell-size", type=float, default=None)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("eval", parents=[common], help="mIoU and RayIoU")
    p.add_argument("--pred", help=".ovg grid or point file")
    p.add_argument("--gt", help=".ovg grid")
    p.add_argument("--rays", default="lidar32",
                   help="lidar32, grid16, or a JSON file with origins, directions, max_range")
    p.add_argument("--ego", default="0,0,1", help="ray origin x,y,z")
    p.add_argument("--max-range", type=float, default=100.0)
    p.add_argument("--thresholds", default="1,2,4")
    p.add_argument("--vis-mask", default=None, help="cameras JSON for a visibility mask")
    p.add_argument("--pixel-stride", type=int, default=8)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="matching-cost benchmark")
    p.add_argument("--sizes", default="100,1000,10000")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--cutoff", type=int, default=20000, help="largest Hungarian size")
    p.add_argument("--metric", choices=("l1", "l2"), default="l1")
    p.add_argument("--methods", default="hungarian,chamfer")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sample", parents=[common], help="sample image features for one query")
    p.add_argument("--fmap", nargs="+", help="one FMAP file per camera")
    p.add_argument("--cams")
    p.add_argument("--context",
                   help="JSON with offsets, weights and points (or point_mean/point_std)")
    p.add_argument("--sigma-min", type=float, default=0.2)
    p.set_defaults(func=cmd_sample)
    return parser


def _explicit_dests(subparser: argparse.ArgumentParser, argv: Sequence[str]) -> set:
    given = set()
    for action in subparser._actions:
        for opt in action.option_strings:
            if any(tok == opt or tok.startswith(opt + "=") for tok in argv):
                given.add(action.dest)
    return given


def resolve_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse flags, fill unset options from ``--config`` and normalize list values."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        if isinstance(doc, dict) and set(doc) == {"resolved_config"}:
            doc = doc["resolved_config"]
        if not isinstance(doc, dict):
            raise ValueError(f"{args.config}: config must be a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        given = _explicit_dests(sub, argv)
        known = {a.dest for a in sub._actions}
        for key, value in doc.items():
            key = key.replace("-", "_")
            if key in _NOT_CONFIG:
                continue
            if key not in known:
                raise ValueError(f"{args.config}: unknown option {key!r} for {args.command}")
            if key not in given:
                setattr(args, key, value)
    missing = [k for k in _REQUIRED[args.command] if getattr(args, k) is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        parser.error(f"{args.command}: missing required option(s) {flags}")
    for key, conv in _LIST_OPTS.items():
        if hasattr(args, key) and getattr(args, key) is not None:
            setattr(args, key, conv(getattr(args, key)))
    return args


def resolved_config(args) -> Dict:
    d = {k: v for k, v in vars(args).items() if k not in {"config", "func"}}
    return _jsonable(d)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = resolve_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"occset: error: {exc}\n")
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    sys.stderr.write(json.dumps({"resolved_config": resolved_config(args)}, sort_keys=True) + "\n")
    try:
        if args.threads < 1:
            raise ValueError("--threads must be >= 1")
        _threads.set_threads(args.threads)
        return args.func(args)
    except (OccsetError, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(f"occset {args.command}: error: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
