#!/usr/bin/env python3
"""Ablation sweep over the number of noise hypotheses (and optionally the
PCA feature dimension) on a trained checkpoint, reporting mean/median
rotation error and inference behavior per setting.

The hypothesis sweep reuses one checkpoint; the PCA sweep retrains per
dimension and is gated behind --pca-dims because of its cost.

    python scripts/sweep_hypotheses.py --ckpt /tmp/toy/model.nckp \
        --data /tmp/toy/dataset --noises 1,3,6,9
"""

import argparse
import subprocess
import sys
from pathlib import Path

import numpy as np

from nocspose.diffusion.checkpoint import load_checkpoint
from nocspose.evaluation import pose_errors
from nocspose.geometry import SimilarityTransform, bbox_from_mask
from nocspose.pipeline import InferenceRequest, estimate
from nocspose.synthgen import read_dataset


def holdout_errors(bundle, dataset, holdout, n_noises, seed):
    rots, confs = [], []
    for cat, model, view in holdout:
        out = dataset.load_view(cat, int(model), int(view))
        req = InferenceRequest(mask=out.mask, bbox=bbox_from_mask(out.mask),
                               intr=dataset.intrinsics, rgb=out.rgb,
                               depth=out.depth, category=cat,
                               n_noises=n_noises, seed=seed)
        res = estimate(req, bundle)
        gt = SimilarityTransform(out.diagonal_norm, out.pose)
        rots.append(pose_errors(res.best.transform, gt)[0])
        confs.append(res.best.confidence)
    return np.asarray(rots), np.asarray(confs)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ckpt", required=True)
    ap.add_argument("--data", required=True)
    ap.add_argument("--noises", default="1,3,6,9")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pca-dims", default=None,
                    help="comma-separated dims; retrains per dim")
    ap.add_argument("--steps", type=int, default=10_000,
                    help="training steps for the PCA sweep")
    args = ap.parse_args()

    bundle = load_checkpoint(args.ckpt)
    dataset = read_dataset(args.data)
    holdout = bundle.meta["holdout"]

    print(f"{'noises':>7} {'rot_mean':>9} {'rot_med':>8} {'conf_mean':>10}")
    for n in (int(x) for x in args.noises.split(",")):
        rots, confs = holdout_errors(bundle, dataset, holdout, n, args.seed)
        print(f"{n:>7} {rots.mean():>9.2f} {np.median(rots):>8.2f} "
              f"{confs.mean():>10.3f}", flush=True)

    if args.pca_dims:
        work = Path(args.ckpt).parent
        for dim in (int(x) for x in args.pca_dims.split(",")):
            out = work / f"model_pca{dim}.nckp"
            if not out.exists():
                cmd = [sys.executable, "-m", "nocspose", "train", "--data",
                       args.data, "--out", str(out), "--steps",
                       str(args.steps), "--pca-dim", str(dim),
                       "--seed", str(args.seed)]
                print("+", " ".join(cmd), flush=True)
                subprocess.run(cmd, check=True)
            b = load_checkpoint(out)
            rots, confs = holdout_errors(b, dataset, b.meta["holdout"], 1,
                                         args.seed)
            print(f"pca={dim}: rot mean {rots.mean():.2f} med "
                  f"{np.median(rots):.2f}", flush=True)


if __name__ == "__main__":
    main()
