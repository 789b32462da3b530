"""Desk-scale comparison: all seven panels on a 64x64 source.

Writes the same outputs as ``isca repro-paper`` and prints per-class accuracy
under both scoring protocols. Takes about a minute.

Usage: python scripts/desk_experiment.py [--src IMAGE] [--out DIR] [--epochs 50]
"""

import argparse
import json
import warnings
from pathlib import Path

import numpy as np

from isca.blocks import load_image, synthetic_image
from isca.cli import run_repro
from isca.distortions import LETTERS


def _diag(path):
    rows = [line.split(",") for line in Path(path).read_text().splitlines()[1:]]
    cm = np.array([[int(v) for v in r[1:]] for r in rows])
    return np.diag(cm) / cm.sum(axis=1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--src", help="grayscale source image (default: 64x64 synthetic)")
    ap.add_argument("--out", default="desk_run")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args()
    src = load_image(args.src) if args.src else synthetic_image(64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        summary = run_repro(src, args.out, seed=args.seed, epochs=args.epochs)
    print(f"{'panel':14s} {'protocol':14s} " + " ".join(f"{c:>5s}" for c in LETTERS) + "   distortions")
    for name in summary:
        for proto, stem in (("leave-one-out", "confusion"), ("in-sample", "confusion_in_sample")):
            acc = _diag(Path(args.out) / f"{stem}_{name}.csv")
            overall = np.mean(acc[1:])
            print(f"{name:14s} {proto:14s} " + " ".join(f"{a:5.2f}" for a in acc) + f"   {overall:.3f}")
    print(json.dumps({k: round(v["accuracy_distortions"], 4) for k, v in summary.items()}))


if __name__ == "__main__":
    main()
