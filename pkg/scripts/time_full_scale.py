"""Time one training epoch of each method at 512x512 (4096 blocks, n=121).

Usage: python scripts/time_full_scale.py [--src IMAGE] [--epochs 1]
"""

import argparse
import resource
import time
import warnings

from isca import distortions as D
from isca.admm import TrainConfig
from isca.blocks import load_image, synthetic_image
from isca.pipeline import PANELS, evaluate_model, fit_method


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--src")
    ap.add_argument("--epochs", type=int, default=1)
    args = ap.parse_args()
    src = load_image(args.src) if args.src else synthetic_image(512)
    t0 = time.perf_counter()
    train = D.make_training_set(src, 0)
    print(f"dataset: {time.perf_counter() - t0:.1f}s", flush=True)
    images, labels = [li.image for li in train], [li.label for li in train]
    for spec in PANELS:
        t0 = time.perf_counter()
        cfg = TrainConfig(rho=0.1 if spec.method == "kisca" else 1.0, max_epochs=args.epochs)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = fit_method(spec, images, cfg=cfg)
        t1 = time.perf_counter()
        loo, _, _ = evaluate_model(model, images, labels)
        rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024
        print(f"{spec.name:14s} fit {t1 - t0:7.1f}s  eval {time.perf_counter() - t1:6.1f}s  peak RSS {rss:6.0f} MB", flush=True)
        del model


if __name__ == "__main__":
    main()
