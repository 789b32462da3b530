"""Command-line interface.

Exit codes: 0 success, 1 usage or I/O error, 2 calibration failure while
generating a dataset, 3 training failure, 4 model and data do not match.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import distortions as D
from .admm import TrainConfig
from .blocks import load_image, partition, save_image, synthetic_image
from .classify import LabeledProjection, class_accuracy, classify_image, format_confusion
from .errors import CalibrationFailed, DimensionError, IscaError, ShapeError
from .kernel import KERNELS, KernelConfig
from .model_io import DATASET_MANIFEST, load_dataset, load_model, save_dataset, save_model
from .pipeline import PANELS, MethodSpec, check_compatible, evaluate_model, fit_method, project, project_images, reconstruct
from .ssim import mean_block_ssim

log = logging.getLogger("isca")

EXIT_OK, EXIT_USAGE, EXIT_CALIBRATION, EXIT_TRAINING, EXIT_MISMATCH = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- helpers ---------------------------------------------------------------

def _fmt(x) -> str:
    """Full-precision float text (shortest round-tripping repr)."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    os.replace(tmp, path)


def _source(path, size: int):
    if path:
        return load_image(path)
    log.info("no source image given; using the %dx%d synthetic test image", size, size)
    return synthetic_image(size)


def _gather(paths) -> tuple[list[str], list[np.ndarray], list[int | None]]:
    """Names, images and labels (None for bare files) from dataset dirs and image files."""
    names, images, labels = [], [], []
    for p in paths:
        p = Path(p)
        if p.is_dir() or p.name == DATASET_MANIFEST:
            items, _ = load_dataset(p)
            names += [li.filename for li in items]
            images += [li.image for li in items]
            labels += [li.label for li in items]
        else:
            names.append(p.name)
            images.append(load_image(p))
            labels.append(None)
    if not images:
        raise CliError("no input images", EXIT_USAGE)
    return names, images, labels


def _load_model(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise CliError(f"model file not found: {path}", EXIT_USAGE) from None


def _check(model, images) -> None:
    for im in images:
        try:
            check_compatible(model, im)
        except ShapeError as exc:
            raise CliError(str(exc), EXIT_MISMATCH) from None


def _method_spec(method: str, kernel: str) -> MethodSpec:
    return MethodSpec(method, kernel if method in ("kisca", "kpca") else None)


def _kernel_cfg(args) -> KernelConfig | None:
    if args.method not in ("kisca", "kpca"):
        return None
    psd = args.psd if args.psd != "auto" else ("clip" if args.kernel == "sigmoid" else "strict")
    return KernelConfig(
        kind=args.kernel,
        rbf_gamma=args.rbf_gamma,
        sigmoid_scale=args.sigmoid_scale,
        sigmoid_offset=args.sigmoid_offset,
        psd=psd,
    )


def _train_cfg(args) -> TrainConfig:
    rho = args.rho if args.rho is not None else (0.1 if args.method == "kisca" else 1.0)
    return TrainConfig(
        p=args.p, rho=rho, eta=args.eta, epsilon=args.epsilon,
        max_epochs=args.epochs, seed=args.seed, gd_steps_per_admm=args.gd_steps,
    )


def confusion_rows(cm):
    return [[D.FAMILIES[r], *cm[r]] for r in range(cm.shape[0])]


def _write_confusion(out: Path, stem: str, cm) -> None:
    _write_csv(out / f"{stem}.csv", ["true\\predicted", *D.FAMILIES], confusion_rows(cm))
    (out / f"{stem}.txt").write_text(format_confusion(cm) + "\n")


def _report_rows(names, reports):
    rows = []
    for name, rep in zip(names, reports):
        (l1, p1), (l2, p2) = rep.top_two()
        rows.append([name, D.LETTERS[rep.majority], D.LETTERS[l1], p1, D.LETTERS[l2], p2, rep.format_top_two(),
                     *rep.histogram])
    return rows


REPORT_HEADER = ["image", "majority", "top1", "top1_pct", "top2", "top2_pct", "summary", *[f"votes_{c}" for c in D.LETTERS]]


# -- commands --------------------------------------------------------------

def cmd_gen_dataset(args) -> int:
    src = _source(args.src, args.size)
    try:
        items = D.make_test_set(src, args.seed) if args.test else D.make_training_set(src, args.seed)
    except CalibrationFailed as exc:
        raise CliError(f"calibration failed: {exc}", EXIT_CALIBRATION) from None
    meta = {"kind": "test" if args.test else "train", "seed": args.seed,
            "source": str(args.src) if args.src else f"synthetic:{args.size}"}
    path = save_dataset(items, args.out, meta)
    worst = max(abs(li.realized_mse - li.target_mse) / li.target_mse for li in items if li.target_mse > 0)
    print(f"wrote {len(items)} images to {path.parent} (worst MSE deviation {100 * worst:.2f}%)")
    return EXIT_OK


def cmd_train(args) -> int:
    items, _ = load_dataset(args.dataset)
    images = [li.image for li in items]
    spec = _method_spec(args.method, args.kernel)
    t0 = time.perf_counter()
    try:
        model = fit_method(spec, images, args.p, args.block, _train_cfg(args), _kernel_cfg(args), args.threads)
    except (IscaError, ValueError, ArithmeticError) as exc:
        raise CliError(f"training {spec.name} failed: {exc}", EXIT_TRAINING) from None
    save_model(model, args.out)
    history = getattr(model, "convergence_log", [])
    log_path = args.log or f"{args.out}.log.csv"
    _write_csv(log_path, ["epoch", "mean_ssim_error"], [[i + 1, e] for i, e in enumerate(history)])
    final = f", final mean SSIM error {history[-1]:.6g} after {len(history)} epochs" if history else ""
    print(f"trained {spec.name} on {len(images)} images in {time.perf_counter() - t0:.1f}s{final}; model -> {args.out}")
    return EXIT_OK


def cmd_project(args) -> int:
    model = _load_model(args.model)
    names, images, _ = _gather(args.images)
    _check(model, images)
    rows = []
    for name, im in zip(names, images):
        coords = project(model, partition(im, model.block_side))
        rows += [[name, i, *c] for i, c in enumerate(coords)]
    _write_csv(args.out, ["image", "block", *[f"c{k}" for k in range(model.p)]], rows)
    print(f"wrote projections of {len(images)} images to {args.out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    model = _load_model(args.model)
    if model.kind not in ("isca", "pca"):
        raise CliError(f"{model.kind} models cannot reconstruct images", EXIT_MISMATCH)
    names, images, _ = _gather(args.images)
    _check(model, images)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, im in zip(names, images):
        rec = reconstruct(model, partition(im, model.block_side))
        save_image(rec, out / f"rec_{Path(name).stem}.pgm", bits=8)
        rows.append([name, mean_block_ssim(rec, im, model.block_side)])
    _write_csv(out / "reconstruction_ssim.csv", ["image", "mean_block_ssim"], rows)
    worst = min(r[1] for r in rows)
    print(f"reconstructed {len(rows)} images into {out} (lowest mean block SSIM {worst:.4f})")
    return EXIT_OK


def _corpus(model, dataset):
    items, _ = load_dataset(dataset)
    images = [li.image for li in items]
    _check(model, images)
    return LabeledProjection.build(project_images(model, images), [li.label for li in items]), items


def cmd_classify(args) -> int:
    model = _load_model(args.model)
    corpus, _ = _corpus(model, args.dataset)
    names, images, _ = _gather(args.images)
    _check(model, images)
    reports = [classify_image(project(model, partition(im, model.block_side)), corpus) for im in images]
    rows = _report_rows(names, reports)
    if args.out:
        _write_csv(args.out, REPORT_HEADER, rows)
    for name, rep in zip(names, reports):
        print(f"{name}: {rep.format_top_two()}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = _load_model(args.model)
    items, _ = load_dataset(args.dataset)
    images = [li.image for li in items]
    _check(model, images)
    test_names, test_images = [], []
    if args.test:
        test_names, test_images, _ = _gather([args.test])
        _check(model, test_images)
    loo, ins, reports = evaluate_model(model, images, [li.label for li in items], test_images)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_confusion(out, "confusion", loo)
    _write_confusion(out, "confusion_in_sample", ins)
    if reports:
        _write_csv(out / "out_of_sample.csv", REPORT_HEADER, _report_rows(test_names, reports))
    print("leave-one-out confusion (rows true, columns predicted):")
    print(format_confusion(loo))
    return EXIT_OK


def run_repro(src, out, seed: int = 0, p: int = 4, epochs: int = 50, threads: int | None = None, panels=PANELS) -> dict:
    """Dataset generation, all panels trained and scored; returns a summary dict."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if src.shape[0] % 8 or src.shape[1] % 8:
        raise DimensionError(f"source {src.shape[1]}x{src.shape[0]} is not divisible by 8")
    train, test = D.make_training_set(src, seed), D.make_test_set(src, seed)
    save_dataset(train, out / "train", {"kind": "train", "seed": seed})
    save_dataset(test, out / "test", {"kind": "test", "seed": seed})
    _write_csv(out / "dataset_calibration.csv", ["set", "file", "label", "target_mse", "realized_mse"],
               [[s, li.filename, li.label, li.target_mse, li.realized_mse] for s, items in (("train", train), ("test", test)) for li in items])
    images, labels = [li.image for li in train], [li.label for li in train]
    test_images, test_names = [li.image for li in test], [li.filename for li in test]
    summary = {}
    table = []
    for spec in panels:
        t0 = time.perf_counter()
        cfg = TrainConfig(p=p, rho=0.1 if spec.method == "kisca" else 1.0, max_epochs=epochs, seed=seed)
        model = fit_method(spec, images, p, 8, cfg, None, threads)
        loo, ins, reports = evaluate_model(model, images, labels, test_images)
        _write_confusion(out, f"confusion_{spec.name}", loo)
        _write_confusion(out, f"confusion_in_sample_{spec.name}", ins)
        history = getattr(model, "convergence_log", [])
        if history:
            _write_csv(out / f"convergence_{spec.name}.csv", ["epoch", "mean_ssim_error"],
                       [[i + 1, e] for i, e in enumerate(history)])
        table += [[spec.name, *row] for row in _report_rows(test_names, reports)]
        acc = class_accuracy(loo)
        summary[spec.name] = {
            "accuracy_distortions": float(np.trace(loo[1:, 1:]) / loo[1:].sum()),
            "class_accuracy": [None if np.isnan(a) else float(a) for a in acc],
        }
        log.info("%s done in %.1fs", spec.name, time.perf_counter() - t0)
        del model
    _write_csv(out / "out_of_sample.csv", ["method", *REPORT_HEADER], table)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


def cmd_repro(args) -> int:
    src = _source(args.src, args.size)
    if src.shape != (512, 512):
        log.warning("source is %dx%d; the reference experiment uses 512x512", src.shape[1], src.shape[0])
    t0 = time.perf_counter()
    try:
        summary = run_repro(src, args.out, args.seed, args.p, args.epochs, args.threads)
    except CalibrationFailed as exc:
        raise CliError(f"calibration failed: {exc}", EXIT_CALIBRATION) from None
    for name, s in summary.items():
        print(f"{name:14s} distortion accuracy {100 * s['accuracy_distortions']:5.1f}%")
    print(f"outputs in {args.out} ({time.perf_counter() - t0:.0f}s)")
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common.add_argument("--threads", type=int, default=None,
                        help="block-level worker threads (default: all cores; ISCA_THREADS overrides)")
    ap = argparse.ArgumentParser(prog="isca", description="Block-wise SSIM subspace learning and distortion recognition.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", parents=[common], help="generate the iso-error training set (or the 12-image test set)")
    g.add_argument("--src", help="source grayscale image (default: synthetic)")
    g.add_argument("--size", type=int, default=512, help="synthetic source size when --src is absent")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--test", action="store_true", help="generate the out-of-sample set instead")
    g.set_defaults(func=cmd_gen_dataset)

    t = sub.add_parser("train", parents=[common], help="fit a model on a dataset directory")
    t.add_argument("--dataset", required=True)
    t.add_argument("--method", choices=("isca", "kisca", "pca", "kpca"), default="isca")
    t.add_argument("--p", type=int, default=4)
    t.add_argument("--block", type=int, default=8, help="block side in pixels")
    t.add_argument("--rho", type=float, default=None, help="ADMM penalty (default 1 for isca, 0.1 for kisca)")
    t.add_argument("--eta", type=float, default=0.1)
    t.add_argument("--kernel", choices=KERNELS, default="rbf")
    t.add_argument("--rbf-gamma", type=float, default=None)
    t.add_argument("--sigmoid-scale", type=float, default=None)
    t.add_argument("--sigmoid-offset", type=float, default=0.0)
    t.add_argument("--psd", choices=("auto", "strict", "clip"), default="auto",
                   help="indefinite kernels: strict rejects, clip projects to PSD (auto: clip for sigmoid)")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--epsilon", type=float, default=1e-3)
    t.add_argument("--gd-steps", type=int, default=1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="convergence CSV (default: <out>.log.csv)")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("project", parents=[common], help="write per-block projections as CSV")
    pr.add_argument("--model", required=True)
    pr.add_argument("--images", nargs="+", required=True, help="image files or dataset directories")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_project)

    rc = sub.add_parser("reconstruct", parents=[common], help="reconstruct images through an ISCA or PCA model")
    rc.add_argument("--model", required=True)
    rc.add_argument("--images", nargs="+", required=True)
    rc.add_argument("--out", required=True)
    rc.set_defaults(func=cmd_reconstruct)

    cl = sub.add_parser("classify", parents=[common], help="1NN distortion votes for images against a training corpus")
    cl.add_argument("--model", required=True)
    cl.add_argument("--dataset", required=True, help="training dataset used as the 1NN corpus")
    cl.add_argument("--images", nargs="+", required=True)
    cl.add_argument("--out", help="CSV report")
    cl.set_defaults(func=cmd_classify)

    ev = sub.add_parser("evaluate", parents=[common], help="confusion matrices over a dataset and an optional test table")
    ev.add_argument("--model", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--test", help="out-of-sample dataset directory")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_evaluate)

    rp = sub.add_parser("repro-paper", parents=[common], help="run the whole comparison end to end")
    rp.add_argument("--src", help="512x512 grayscale source (default: synthetic)")
    rp.add_argument("--size", type=int, default=512, help="synthetic source size when --src is absent")
    rp.add_argument("--out", required=True)
    rp.add_argument("--seed", type=int, default=0)
    rp.add_argument("--p", type=int, default=4)
    rp.add_argument("--epochs", type=int, default=50)
    rp.set_defaults(func=cmd_repro)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (OSError, IscaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
