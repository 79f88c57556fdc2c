"""Operator surface: data generation, training, inference, evaluation, and
rotation-distribution plots as reproducible subcommands.

Exit codes: 0 success, 2 validation error (bad flags, config, or
preconditions), 3 runtime error. Progress output is newline-delimited JSON.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import imgio
from .config import ConfigError, load_config, pick
from .diffusion.checkpoint import CheckpointError, load_checkpoint
from .diffusion.schedule import ScheduleError
from .diffusion.training import TrainConfig, TrainingDiverged, train
from .evaluation import (EvalInstance, format_table, parse_thresholds,
                         precision_table)
from .features import read_feature_file
from .geometry import (BoundingBox, GeometryError, Intrinsics, RigidPose,
                       SimilarityTransform, bbox_from_mask)
from .pipeline import (MODALITIES, InferenceRequest, estimate, result_to_dict,
                       rotation_spread, sample_maps)
from .registration import RobustParams
from .synthgen import DatasetError, generate_dataset, read_dataset

VALIDATION_ERRORS = (ConfigError, GeometryError, ScheduleError,
                     argparse.ArgumentTypeError)


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True), flush=True)


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    categories = pick(args.categories and args.categories.split(","),
                      cfg, "data", "categories", ["cup", "laptop"])
    out = pick(args.out, cfg, "paths", "output", None)
    if not out:
        raise GeometryError("--out is required")
    shapes = pick(args.shapes, cfg, "data", "shapes", "builtin")
    mesh_dir = pick(args.mesh_dir, cfg, "data", "mesh_dir", None)
    if shapes not in ("builtin", "obj"):
        raise GeometryError("--shapes must be builtin or obj")
    if shapes == "obj" and not mesh_dir:
        raise GeometryError("--shapes obj requires --mesh-dir")
    ds = generate_dataset(
        root=out,
        categories=categories,
        models_per_category=pick(args.models_per_category, cfg, "data",
                                 "models_per_category", 3),
        subdiv=pick(args.subdiv, cfg, "data", "subdiv", 2),
        size=pick(args.size, cfg, "data", "size", 64),
        seed=pick(args.seed, cfg, "data", "seed", 0),
        radius=pick(args.radius, cfg, "data", "radius", 2.0),
        mesh_dir=mesh_dir if shapes == "obj" else None,
        progress=_emit,
    )
    _emit({"kind": "done", "command": "gen-data", "root": out,
           "views": ds.manifest["views_per_model"],
           "categories": ds.categories})
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    data_root = pick(args.data, cfg, "paths", "dataset", None)
    out = pick(args.out, cfg, "paths", "checkpoint", None)
    if not data_root or not out:
        raise GeometryError("--data and --out are required")
    tc = TrainConfig(
        size=pick(args.size, cfg, "train", "size", 32),
        batch_size=pick(args.batch, cfg, "train", "batch_size", 16),
        lr=pick(args.lr, cfg, "train", "lr", 1e-3),
        drop_rate=pick(args.drop_rate, cfg, "train", "drop_rate", 0.25),
        steps=pick(args.steps, cfg, "train", "steps", 10000),
        seed=pick(args.seed, cfg, "train", "seed", 0),
        pca_dim=pick(args.pca_dim, cfg, "train", "pca_dim", 6),
        holdout_views=pick(args.holdout, cfg, "train", "holdout", 20),
        channels=tuple(pick(args.channels
                            and tuple(int(c) for c in args.channels.split(",")),
                            cfg, "train", "channels", (16, 32, 64))),
        blocks=pick(args.blocks, cfg, "train", "blocks", 2),
        sched_steps=pick(args.sched_steps, cfg, "train", "sched_steps", 1000),
        beta_start=pick(args.beta_start, cfg, "train", "beta_start", 1e-4),
        beta_end=pick(args.beta_end, cfg, "train", "beta_end", 0.02),
        log_every=pick(None, cfg, "train", "log_every", 100),
        checkpoint_every=pick(None, cfg, "train", "checkpoint_every", 1000),
    )
    dataset = read_dataset(data_root)
    log_path = args.log or out + ".log.ndjson"
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    train(dataset, tc, out, log_path, progress=args.progress)
    _emit({"kind": "done", "command": "train", "checkpoint": out,
           "log": log_path, "steps": tc.steps})
    return 0


# ---------------------------------------------------------------------------
# infer


def _parse_intr(spec: str, shape) -> Intrinsics:
    try:
        fx, fy, cx, cy = (float(x) for x in spec.split(","))
    except ValueError as err:
        raise GeometryError(f"bad --intr '{spec}', expected fx,fy,cx,cy") \
            from err
    return Intrinsics(fx, fy, cx, cy, width=shape[1], height=shape[0])


def _parse_bbox(spec: str) -> BoundingBox:
    try:
        cu, cv, side = (float(x) for x in spec.split(","))
    except ValueError as err:
        raise GeometryError(f"bad --bbox '{spec}', expected cu,cv,side") \
            from err
    return BoundingBox(cu, cv, side)


def _load_infer_inputs(args):
    """Returns (rgb, depth, mask, intr, category, gt_block, default_name)."""
    if args.view:
        if not args.data:
            raise GeometryError("--view requires --data")
        ds = read_dataset(args.data)
        try:
            cat, model, view = args.view.split("/")
            out = ds.load_view(cat, int(model), int(view))
        except (ValueError, KeyError) as err:
            raise GeometryError(
                f"bad --view '{args.view}', expected category/model/index") \
                from err
        gt = {"pose": out.pose.matrix().tolist(),
              "scale": out.diagonal_norm,
              "category": cat}
        name = f"{cat}_{int(model)}_{int(view):04d}"
        return (out.rgb, out.depth, out.mask, ds.intrinsics, cat, gt, name)
    if not args.mask:
        raise GeometryError("need --view or --mask (with --rgb/--depth)")
    mask = imgio.load_mask(args.mask)
    rgb = imgio.load_rgb(args.rgb).astype(np.float64) if args.rgb else None
    depth = imgio.load_depth(args.depth) if args.depth else None
    if not args.intr:
        raise GeometryError("--intr is required with file inputs")
    intr = _parse_intr(args.intr, mask.shape)
    return (rgb, depth, mask, intr, args.category, None, "result")


def cmd_infer(args) -> int:
    cfg = load_config(args.config)
    bundle = load_checkpoint(args.ckpt)
    rgb, depth, mask, intr, category, gt, name = _load_infer_inputs(args)
    if args.category:
        category = args.category
    inputs = pick(args.inputs and args.inputs.split(","), cfg, "infer",
                  "inputs", list(MODALITIES))
    req = InferenceRequest(
        mask=mask,
        bbox=_parse_bbox(args.bbox) if args.bbox else bbox_from_mask(mask),
        intr=intr,
        rgb=rgb,
        depth=depth,
        category=category,
        modalities=tuple(inputs),
        n_noises=pick(args.n_noises, cfg, "infer", "n_noises", 6),
        seed=pick(args.seed, cfg, "infer", "seed", 0),
        sample_steps=pick(args.steps, cfg, "infer", "steps", 10),
        external_features=(read_feature_file(args.features_file)
                           if args.features_file else None),
    )
    os.makedirs(args.out, exist_ok=True)

    if args.no_register:
        maps = sample_maps(req, bundle)
        paths = []
        for i, (seed_i, nocs) in enumerate(maps):
            p = os.path.join(args.out, f"{name}_hyp{i}_nocs.png")
            imgio.save_nocs(p, nocs)
            paths.append(os.path.basename(p))
        imgio.save_mask(os.path.join(args.out, f"{name}_mask.png"), mask)
        payload = {"hypotheses": [{"index": i, "seed": s, "nocs_png": p}
                                  for i, ((s, _), p) in
                                  enumerate(zip(maps, paths))],
                   "modalities": list(req.modalities), "registered": False}
    else:
        if depth is None:
            raise GeometryError("registration requires depth "
                                "(use --no-register for map-only output)")
        robust = None
        nb = pick(args.noise_bound, cfg, "robust", "noise_bound", None)
        if nb is not None:
            robust = RobustParams(
                noise_bound=nb,
                max_correspondences=pick(args.max_corr, cfg, "robust",
                                         "max_correspondences", 512))
        elif args.max_corr is not None:
            raise GeometryError("--max-corr requires --noise-bound")
        result = estimate(req, bundle, robust)
        paths = []
        for rec in result.records:
            p = os.path.join(args.out,
                             f"{name}_hyp{rec.hypothesis.index}_nocs.png")
            imgio.save_nocs(p, rec.nocs)
            paths.append(os.path.basename(p))
        imgio.save_mask(os.path.join(args.out, f"{name}_mask.png"), mask)
        payload = result_to_dict(result, req.modalities, paths)
        payload["registered"] = True
    if gt is not None:
        payload["gt"] = gt
    payload["seed"] = req.seed
    out_json = os.path.join(args.out, f"{name}.json")
    _write_json(out_json, payload)
    _emit({"kind": "done", "command": "infer", "result": out_json})
    return 0


# ---------------------------------------------------------------------------
# eval


def _gt_from_entry(entry: dict) -> SimilarityTransform:
    m = np.asarray(entry["pose"], dtype=np.float64)
    return SimilarityTransform(float(entry["scale"]),
                               RigidPose(m[:3, :3], m[:3, 3]))


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    pred_files = sorted(f for f in os.listdir(args.pred)
                        if f.endswith(".json"))
    if not pred_files:
        raise GeometryError(f"no prediction files in {args.pred}")
    gt_map = None
    if args.gt:
        with open(args.gt, "r", encoding="utf-8") as f:
            gt_map = json.load(f)
    sym_cats = set(pick(args.symmetric_categories
                        and args.symmetric_categories.split(","),
                        cfg, "eval", "symmetric_categories", []))
    unit_label = pick(args.unit_label, cfg, "eval", "unit_label", "cm")
    unit_scale = pick(args.unit_scale, cfg, "eval", "unit_scale", 0.01)
    thresholds = parse_thresholds(
        pick(args.thresholds, cfg, "eval", "thresholds", "5:5,10:5,15:5"),
        unit_scale)

    instances = []
    unmatched = []
    seen = set()
    for fname in pred_files:
        stem = fname[:-5]
        with open(os.path.join(args.pred, fname), "r", encoding="utf-8") as f:
            payload = json.load(f)
        if not payload.get("registered", True) or "best" not in payload:
            continue
        if gt_map is not None:
            if stem not in gt_map:
                unmatched.append(stem)
                continue
            gt_entry = gt_map[stem]
        elif "gt" in payload:
            gt_entry = payload["gt"]
        else:
            unmatched.append(stem)
            continue
        seen.add(stem)
        m = np.asarray(payload["best"]["transform"], dtype=np.float64)
        rot = m[:3, :3] / float(payload["best"]["scale"])
        pred = SimilarityTransform(float(payload["best"]["scale"]),
                                   RigidPose(rot, m[:3, 3]))
        cat = gt_entry["category"]
        instances.append(EvalInstance(
            pred=pred, gt=_gt_from_entry(gt_entry), category=cat,
            symmetry="y-axis" if cat in sym_cats else "none"))
    if gt_map is not None:
        unmatched += sorted(set(gt_map) - seen)
    if unmatched:
        raise DatasetError("prediction/ground-truth id mismatch: "
                           + ", ".join(sorted(unmatched)))
    if not instances:
        raise GeometryError("no evaluable predictions (missing gt?)")

    table = precision_table(instances, thresholds)
    text = format_table(table, unit_label, unit_scale)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "report.json"), table.to_dict())
        with open(os.path.join(args.out, "report.txt"), "w",
                  encoding="utf-8") as f:
            f.write(text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# plot-rotations


def _collect_rotations(pred_path: str) -> list:
    files = [pred_path]
    if os.path.isdir(pred_path):
        files = [os.path.join(pred_path, f)
                 for f in sorted(os.listdir(pred_path)) if f.endswith(".json")]
    rots = []
    for path in files:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        for h in payload.get("hypotheses", []):
            if h.get("transform") is not None:
                m = np.asarray(h["transform"], dtype=np.float64)
                rots.append(m[:3, :3] / float(h["scale"]))
    if not rots:
        raise GeometryError(f"no rotations found under {pred_path}")
    return rots


def _svg_scatter(vectors: np.ndarray) -> str:
    """Two orthographic projections (x-y and x-z) of unit vectors."""
    panels = [("x-y", 0, 1), ("x-z", 0, 2)]
    width, r = 220, 90
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" '
             f'width="{2 * width}" height="{width + 20}" '
             f'viewBox="0 0 {2 * width} {width + 20}">']
    for p, (label, ax, ay) in enumerate(panels):
        cx = width // 2 + p * width
        cy = width // 2
        parts.append(f'<circle cx="{cx}" cy="{cy}" r="{r}" fill="none" '
                     'stroke="#999"/>')
        parts.append(f'<text x="{cx}" y="{width + 12}" font-size="12" '
                     f'text-anchor="middle">{label}</text>')
        for v in vectors:
            parts.append(f'<circle cx="{cx + r * v[ax]:.2f}" '
                         f'cy="{cy - r * v[ay]:.2f}" r="2.5" fill="#c33" '
                         'fill-opacity="0.7"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot_rotations(args) -> int:
    rots = _collect_rotations(args.pred)
    probe = np.asarray([float(x) for x in args.probe.split(",")])
    probe /= np.linalg.norm(probe)

    class _H:  # rotation_spread consumes transform-bearing hypotheses
        def __init__(self, r):
            self.transform = SimilarityTransform(1.0, RigidPose(r, np.zeros(3)))

    vectors = rotation_spread([_H(r) for r in rots], probe)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(_svg_scatter(vectors))
    _emit({"kind": "done", "command": "plot-rotations", "svg": args.out,
           "points": len(vectors)})
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nocspose",
        description="Category-level pose estimation from diffusion-predicted "
                    "canonical coordinate maps.",
        epilog="Exit codes: 0 success, 2 validation error, 3 runtime error.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic dataset")
    g.add_argument("--out", help="dataset root directory")
    g.add_argument("--config")
    g.add_argument("--shapes", help="builtin procedural families or obj")
    g.add_argument("--categories", help="comma-separated category names")
    g.add_argument("--models-per-category", type=int)
    g.add_argument("--subdiv", type=int, help="icosphere subdivision level")
    g.add_argument("--size", type=int, help="rendered image size in pixels")
    g.add_argument("--radius", type=float, help="orbit radius (canonical)")
    g.add_argument("--mesh-dir", help="load OBJ models from DIR/<category>/")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the noise-estimation network")
    t.add_argument("--data", help="dataset root")
    t.add_argument("--out", help="checkpoint output path")
    t.add_argument("--config")
    t.add_argument("--log", help="NDJSON loss log path")
    t.add_argument("--steps", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--drop-rate", type=float)
    t.add_argument("--size", type=int)
    t.add_argument("--pca-dim", type=int)
    t.add_argument("--holdout", type=int)
    t.add_argument("--channels", help="comma-separated channel widths")
    t.add_argument("--blocks", type=int)
    t.add_argument("--sched-steps", type=int)
    t.add_argument("--beta-start", type=float)
    t.add_argument("--beta-end", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--progress", action="store_true",
                   help="print loss lines to stdout")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="estimate pose for one observation")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--out", required=True, help="output directory")
    i.add_argument("--config")
    i.add_argument("--data", help="dataset root (with --view)")
    i.add_argument("--view", help="category/model/view dataset reference")
    i.add_argument("--rgb")
    i.add_argument("--depth")
    i.add_argument("--mask")
    i.add_argument("--intr", help="fx,fy,cx,cy for file inputs")
    i.add_argument("--bbox", help="cu,cv,side (default: from mask)")
    i.add_argument("--category")
    i.add_argument("--inputs",
                   help=f"comma-separated subset of {','.join(MODALITIES)}")
    i.add_argument("--n-noises", type=int)
    i.add_argument("--steps", type=int, help="fast sampler steps")
    i.add_argument("--seed", type=int)
    i.add_argument("--noise-bound", type=float)
    i.add_argument("--max-corr", type=int)
    i.add_argument("--features-file", help="external dense feature file")
    i.add_argument("--no-register", action="store_true",
                   help="emit NOCS maps only")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True, help="directory of result JSONs")
    e.add_argument("--out", help="report output directory")
    e.add_argument("--config")
    e.add_argument("--gt", help="ground-truth JSON (default: gt embedded "
                                "in predictions)")
    e.add_argument("--thresholds", help="deg:dist,... in display units")
    e.add_argument("--unit-label")
    e.add_argument("--unit-scale", type=float)
    e.add_argument("--symmetric-categories",
                   help="comma-separated y-axis-symmetric categories")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("plot-rotations",
                       help="SVG scatter of hypothesis rotations")
    r.add_argument("--pred", required=True,
                   help="result JSON file or directory")
    r.add_argument("--out", required=True, help="SVG output path")
    r.add_argument("--probe", default="0,1,0", help="probe axis")
    r.set_defaults(func=cmd_plot_rotations)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (DatasetError, CheckpointError, TrainingDiverged, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except KeyboardInterrupt:
        return 3


if __name__ == "__main__":
    sys.exit(main())
