"""Per-block PCA and kernel PCA baselines on the same block grid as ISCA.

PCA centers each block position across the training images and keeps the top
``p`` eigenvectors of ``S_i = X_i X_i^T``. Kernel PCA uses the normalized,
double-centered kernel and stores coefficients ``alpha / sqrt(lambda)`` so a
projection is ``A_i^T k_c`` exactly as in kernel ISCA.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import BlockSet, untile_blocks
from .errors import EmptyDataset, RankDeficient, ShapeError
from .kernel import KernelConfig, KernelStats, centered_kernel_vectors, process_kernel, raw_block_stack

EIG_FLOOR = 1e-10


def _check_grid(model, bs: BlockSet) -> None:
    if bs.grid != tuple(model.grid) or bs.block_side != model.block_side:
        raise ShapeError(f"block grid {bs.grid}/{bs.block_side} does not match model {model.grid}/{model.block_side}")


def top_eigh(S, p: int):
    """Top-``p`` eigenpairs of symmetric ``S (..., m, m)``, eigenvalues nonincreasing."""
    lam, vec = np.linalg.eigh(S)
    return np.ascontiguousarray(lam[..., ::-1][..., :p]), np.ascontiguousarray(vec[..., ::-1][..., :p])


@dataclass
class PcaModel:
    bases: np.ndarray  # (b, q, p)
    eigenvalues: np.ndarray  # (b, p)
    means: np.ndarray  # (b, q), mean raw block per position
    block_side: int
    grid: tuple[int, int]

    kind = "pca"

    @property
    def p(self) -> int:
        return self.bases.shape[2]

    @property
    def q(self) -> int:
        return self.bases.shape[1]

    @property
    def b(self) -> int:
        return self.bases.shape[0]


def fit_pca(images, p: int = 4, block_side: int = 8) -> PcaModel:
    images = list(images)
    if len(images) < 2:
        raise EmptyDataset("PCA needs at least 2 training images")
    X = raw_block_stack(images, block_side)  # (b, n, q)
    if not 1 <= p <= X.shape[2]:
        raise ValueError(f"p={p} must lie in [1, q={X.shape[2]}]")
    mu = X.mean(axis=1)
    Xc = X - mu[:, None, :]
    S = np.swapaxes(Xc, -1, -2) @ Xc
    lam, U = top_eigh(S, p)
    h, w = np.shape(images[0])
    return PcaModel(U, lam, mu, block_side, (h // block_side, w // block_side))


def project_pca(model: PcaModel, bs: BlockSet) -> np.ndarray:
    """``U_i^T (x_i - mu_i)`` per block, shape ``(b, p)``."""
    _check_grid(model, bs)
    return np.einsum("bqp,bq->bp", model.bases, bs.raw_blocks() - model.means)


def reconstruct_pca(model: PcaModel, bs: BlockSet) -> np.ndarray:
    coords = project_pca(model, bs)
    raw = np.einsum("bqp,bp->bq", model.bases, coords) + model.means
    return np.clip(untile_blocks(raw, bs.block_side, bs.grid), 0.0, 1.0)


@dataclass
class KernelPcaModel:
    coef: np.ndarray  # (b, n, p) eigenvectors scaled by 1/sqrt(eigenvalue)
    eigenvalues: np.ndarray  # (b, p)
    stats: KernelStats
    kernel: KernelConfig
    block_side: int
    grid: tuple[int, int]
    negative_mass: float = 0.0

    kind = "kernel_pca"

    @property
    def p(self) -> int:
        return self.coef.shape[2]

    @property
    def n(self) -> int:
        return self.coef.shape[1]

    @property
    def b(self) -> int:
        return self.coef.shape[0]

    @property
    def q(self) -> int:
        return self.block_side**2


def fit_kernel_pca(images, p: int = 4, kcfg: KernelConfig = KernelConfig(), block_side: int = 8) -> KernelPcaModel:
    images = list(images)
    if len(images) < 2:
        raise EmptyDataset("kernel PCA needs at least 2 training images")
    X = raw_block_stack(images, block_side)
    kcfg = kcfg.resolved(X.shape[2])
    pk = process_kernel(X, kcfg)
    lam, alpha = top_eigh(pk.K, p)
    if lam.min() <= EIG_FLOOR:
        raise RankDeficient(f"kernel has fewer than p={p} positive eigenvalues (min {lam.min():.3g})")
    h, w = np.shape(images[0])
    return KernelPcaModel(
        alpha / np.sqrt(lam)[:, None, :], lam, pk.stats, kcfg, block_side,
        (h // block_side, w // block_side), pk.negative_mass,
    )


def project_kernel_pca(model: KernelPcaModel, bs: BlockSet) -> np.ndarray:
    _check_grid(model, bs)
    kc, _ = centered_kernel_vectors(model.stats, bs.raw_blocks()[:, None, :], model.kernel)
    return np.einsum("bnp,bn->bp", model.coef, kc[..., 0])
