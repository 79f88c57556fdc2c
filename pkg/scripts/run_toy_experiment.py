#!/usr/bin/env python3
"""Desk-scale end-to-end experiment: render a synthetic dataset, train the
diffusion NOCS estimator, run multi-hypothesis inference on the held-out
views, and print the pose precision table.

Everything routes through the CLI so the whole run is reproducible from the
command line flags below. Expect roughly an hour of training on a desktop
CPU at the default settings.

    python scripts/run_toy_experiment.py --work /tmp/toy --steps 10000
"""

import argparse
import json
import subprocess
import sys
from pathlib import Path


def run(*args):
    cmd = [sys.executable, "-m", "nocspose", *map(str, args)]
    print("+", " ".join(cmd), flush=True)
    res = subprocess.run(cmd)
    if res.returncode != 0:
        sys.exit(res.returncode)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work", required=True, help="working directory")
    ap.add_argument("--categories", default="cup,laptop")
    ap.add_argument("--models-per-category", type=int, default=3)
    ap.add_argument("--subdiv", type=int, default=2)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--steps", type=int, default=10_000)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--holdout", type=int, default=20)
    ap.add_argument("--n-noises", type=int, default=6)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    work = Path(args.work)
    data = work / "dataset"
    ckpt = work / "model.nckp"
    pred = work / "predictions"
    report = work / "report"

    if not (data / "manifest.json").exists():
        run("gen-data", "--out", data, "--categories", args.categories,
            "--models-per-category", args.models_per_category,
            "--subdiv", args.subdiv, "--size", args.size,
            "--seed", args.seed)
    if not ckpt.exists():
        run("train", "--data", data, "--out", ckpt, "--steps", args.steps,
            "--size", args.size, "--lr", args.lr, "--holdout", args.holdout,
            "--seed", args.seed, "--progress")

    holdout = json.loads(_read_meta(ckpt))["holdout"]
    pred.mkdir(parents=True, exist_ok=True)
    for cat, model, view in holdout:
        run("infer", "--ckpt", ckpt, "--data", data,
            "--view", f"{cat}/{model}/{view}", "--out", pred,
            "--n-noises", args.n_noises, "--seed", args.seed)

    run("eval", "--pred", pred, "--out", report,
        "--thresholds", "5:5,10:5,15:5")
    run("plot-rotations", "--pred", pred, "--out", work / "rotations.svg")
    print(f"report in {report}, rotation scatter in {work}/rotations.svg")


def _read_meta(ckpt_path):
    from nocspose.diffusion.checkpoint import load_checkpoint
    return json.dumps(load_checkpoint(ckpt_path).meta)


if __name__ == "__main__":
    main()
