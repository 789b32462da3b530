"""Model-kind dispatch for projection and reconstruction, and the comparison
experiment: train every method on a labeled set and score 1NN recognition."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import admm, kernel, pca
from .blocks import partition
from .classify import LabeledProjection, VoteReport, classify_corpus, classify_image, confusion_matrix
from .errors import ShapeError

log = logging.getLogger(__name__)

METHODS = ("isca", "kisca", "pca", "kpca")


def project(model, bs) -> np.ndarray:
    """Per-block coordinates ``(b, p)`` of one image for any model kind."""
    if model.kind == "isca":
        return admm.project(model, bs)
    if model.kind == "kernel_isca":
        return kernel.project_kernel(model, bs)
    if model.kind == "pca":
        return pca.project_pca(model, bs)
    if model.kind == "kernel_pca":
        return pca.project_kernel_pca(model, bs)
    raise TypeError(f"unknown model kind {model.kind!r}")


def reconstruct(model, bs) -> np.ndarray:
    if model.kind == "isca":
        return admm.reconstruct(model, bs)
    if model.kind == "pca":
        return pca.reconstruct_pca(model, bs)
    raise TypeError(f"{model.kind} models have no pre-image; reconstruction is not available")


def project_images(model, images) -> np.ndarray:
    """Coordinates of many images arranged per block position, ``(b, n, p)``."""
    return np.stack([project(model, partition(im, model.block_side)) for im in images], axis=1)


def check_compatible(model, image) -> None:
    s = model.block_side
    h, w = np.shape(image)
    if (h // s, w // s) != tuple(model.grid) or h % s or w % s:
        raise ShapeError(f"image {w}x{h} does not fit model grid {model.grid} with block side {s}")


@dataclass(frozen=True)
class MethodSpec:
    """One panel of the comparison: method name and (for kernel methods) kernel."""

    method: str
    kernel: str | None = None

    @property
    def name(self) -> str:
        return self.method if self.kernel is None else f"{self.method}-{self.kernel}"


# the seven panels: ISCA, kernel ISCA x3, PCA, kernel PCA x2
PANELS = (
    MethodSpec("isca"),
    MethodSpec("kisca", "linear"),
    MethodSpec("kisca", "rbf"),
    MethodSpec("kisca", "sigmoid"),
    MethodSpec("pca"),
    MethodSpec("kpca", "rbf"),
    MethodSpec("kpca", "sigmoid"),
)


def kernel_config(name: str, **overrides) -> kernel.KernelConfig:
    # tanh kernels are indefinite on image blocks; project them onto the PSD cone
    psd = "clip" if name == "sigmoid" else "strict"
    return kernel.KernelConfig(kind=name, psd=overrides.pop("psd", psd), **overrides)


def fit_method(
    spec: MethodSpec,
    images,
    p: int = 4,
    block_side: int = 8,
    cfg: admm.TrainConfig | None = None,
    kcfg: kernel.KernelConfig | None = None,
    threads: int | None = 1,
):
    if spec.method == "isca":
        return admm.train(images, cfg or admm.TrainConfig(p=p), block_side=block_side, threads=threads)
    if spec.method == "kisca":
        kc = kcfg or kernel_config(spec.kernel or "rbf")
        return kernel.train_kernel(images, kc, cfg or admm.TrainConfig(p=p, rho=0.1), block_side=block_side, threads=threads)
    if spec.method == "pca":
        return pca.fit_pca(images, p, block_side)
    if spec.method == "kpca":
        return pca.fit_kernel_pca(images, p, kcfg or kernel_config(spec.kernel or "rbf"), block_side)
    raise ValueError(f"unknown method {spec.method!r}; choose from {METHODS}")


@dataclass
class PanelResult:
    spec: MethodSpec
    confusion: np.ndarray
    confusion_in_sample: np.ndarray
    test_reports: list[VoteReport] = field(default_factory=list)
    convergence_log: list[float] = field(default_factory=list)


def evaluate_model(model, train_images, train_labels, test_images=()) -> tuple[np.ndarray, np.ndarray, list[VoteReport]]:
    """Leave-one-out and in-sample confusion matrices plus test-image vote reports."""
    corpus = LabeledProjection.build(project_images(model, train_images), train_labels)
    loo = [r.majority for r in classify_corpus(corpus, leave_one_out=True)]
    ins = [r.majority for r in classify_corpus(corpus, leave_one_out=False)]
    labels = corpus.labels
    tests = [classify_image(project(model, partition(im, model.block_side)), corpus) for im in test_images]
    return confusion_matrix(labels, loo), confusion_matrix(labels, ins), tests
