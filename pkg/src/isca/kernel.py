"""Kernel ISCA: SSIM-distance subspaces in a kernel feature space.

For every block position the ``n`` training blocks define a Gram matrix that
is normalized to unit diagonal, double-centered, and factored as
``K = Delta^T Delta``. Bases are coefficient matrices ``Theta`` (``n x p``)
with ``Theta^T K Theta = I``, which becomes orthonormality of ``Delta Theta``
and is enforced by the same ADMM projection used for linear ISCA.

Kernels act on raw (uncentered) blocks; centering happens in feature space.
Stacked shapes: training blocks ``(b, n, q)``, kernels ``(b, n, n)``,
coefficients ``(b, n, p)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from ._parallel import for_each_chunk
from .admm import TrainConfig, orthonormality_residual, prox_orthonormal
from .blocks import BlockSet, as_gray_image, tile_blocks
from .errors import (
    DimensionError,
    DimensionMismatch,
    EmptyDataset,
    IndefiniteKernel,
    RankDeficient,
    ShapeError,
    ZeroDiagonal,
)
from .ssim import DEFAULT_CONSTS, SsimConstants

log = logging.getLogger(__name__)

KERNELS = ("linear", "rbf", "sigmoid")
EIG_CLAMP = 1e-10
EIG_NEGATIVE_TOL = 1e-6
ZERO_DIAG_TOL = 1e-300


@dataclass(frozen=True)
class KernelConfig:
    """Kernel choice. ``None`` parameters default to ``1/q`` (scales) and 0 (offset).

    ``psd="strict"`` rejects processed kernels with eigenvalues below
    ``-1e-6``; ``psd="clip"`` instead projects them onto the PSD cone. The
    tanh kernel is indefinite for typical image blocks and needs ``"clip"``.
    ``normalize=False`` skips the unit-diagonal scaling (used to check that
    linear kernel PCA reduces to PCA).
    """

    kind: str = "rbf"
    rbf_gamma: float | None = None
    sigmoid_scale: float | None = None
    sigmoid_offset: float = 0.0
    psd: str = "strict"
    normalize: bool = True

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}; choose from {KERNELS}")
        if self.rbf_gamma is not None and not self.rbf_gamma > 0:
            raise ValueError("rbf_gamma must be positive")
        if self.psd not in ("strict", "clip"):
            raise ValueError(f"psd must be 'strict' or 'clip', got {self.psd!r}")

    def resolved(self, q: int) -> "KernelConfig":
        return KernelConfig(
            self.kind,
            self.rbf_gamma if self.rbf_gamma is not None else 1.0 / q,
            self.sigmoid_scale if self.sigmoid_scale is not None else 1.0 / q,
            self.sigmoid_offset,
            self.psd,
            self.normalize,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _sqnorm(a):
    return np.einsum("...i,...i->...", a, a)


def kernel_matrix(A, B=None, kcfg: KernelConfig = KernelConfig()):
    """Gram matrix ``kappa(a_j, b_k)`` between rows of ``A (..., n, q)`` and ``B (..., m, q)``.

    With ``B`` omitted this is the training kernel of ``A`` with itself.
    """
    A = np.asarray(A, dtype=np.float64)
    B = A if B is None else np.asarray(B, dtype=np.float64)
    if A.shape[-1] != B.shape[-1]:
        raise ShapeError(f"block lengths differ: {A.shape} vs {B.shape}")
    kcfg = kcfg.resolved(A.shape[-1])
    dot = A @ np.swapaxes(B, -1, -2)
    if kcfg.kind == "linear":
        return dot
    if kcfg.kind == "rbf":
        d2 = _sqnorm(A)[..., :, None] + _sqnorm(B)[..., None, :] - 2.0 * dot
        return np.exp(-kcfg.rbf_gamma * np.maximum(d2, 0.0))
    return np.tanh(kcfg.sigmoid_scale * dot + kcfg.sigmoid_offset)


def kernel_self(A, kcfg: KernelConfig = KernelConfig()):
    """``kappa(a, a)`` for each row of ``A``; the diagonal of :func:`kernel_matrix`."""
    A = np.asarray(A, dtype=np.float64)
    kcfg = kcfg.resolved(A.shape[-1])
    if kcfg.kind == "linear":
        return _sqnorm(A)
    if kcfg.kind == "rbf":
        return np.ones(A.shape[:-1])
    return np.tanh(kcfg.sigmoid_scale * _sqnorm(A) + kcfg.sigmoid_offset)


def _inv_sqrt_diag(d, on_zero: str):
    d = np.asarray(d, dtype=np.float64)
    bad = d <= ZERO_DIAG_TOL
    if bad.any():
        if on_zero == "raise":
            raise ZeroDiagonal(f"{int(bad.sum())} kernel diagonal entries are not positive")
        # constant text so the default filter reports it once per call site
        log.debug("%d blocks with non-positive kernel self-similarity", int(bad.sum()))
        warnings.warn(
            "blocks with a non-positive kernel self-similarity have their rows zeroed",
            RuntimeWarning,
            stacklevel=3,
        )
    return np.where(bad, 0.0, 1.0 / np.sqrt(np.where(bad, 1.0, d)))


def normalize_kernel(K, on_zero: str = "raise"):
    """``K(a,b) / sqrt(K(a,a) K(b,b))``.

    ``on_zero="zero"`` replaces rows and columns with a non-positive diagonal
    by zeros (with a warning) instead of raising :class:`ZeroDiagonal`.
    """
    K = np.asarray(K, dtype=np.float64)
    s = _inv_sqrt_diag(np.diagonal(K, axis1=-2, axis2=-1), on_zero)
    return K * s[..., :, None] * s[..., None, :]


def double_center(K):
    """``H K H`` with ``H = I - 11^T/n``."""
    K = np.asarray(K, dtype=np.float64)
    row = K.mean(axis=-1, keepdims=True)
    col = K.mean(axis=-2, keepdims=True)
    return K - row - col + K.mean(axis=(-2, -1), keepdims=True)


def delta_factor(K, clip: bool = False):
    """``Delta = Upsilon^(1/2) Psi^T`` from ``K = Psi Upsilon Psi^T``, so ``Delta^T Delta = K``.

    Eigenvalues below ``1e-10`` are clamped to zero; anything below ``-1e-6``
    means the kernel is not positive semidefinite and raises unless ``clip``.
    """
    K = np.asarray(K, dtype=np.float64)
    K = 0.5 * (K + np.swapaxes(K, -1, -2))
    lam, psi = np.linalg.eigh(K)
    worst = lam.min() if lam.size else 0.0
    if worst < -EIG_NEGATIVE_TOL and not clip:
        raise IndefiniteKernel(f"kernel eigenvalue {worst:.3g} < -{EIG_NEGATIVE_TOL}")
    lam = np.where(lam < EIG_CLAMP, 0.0, lam)
    return np.ascontiguousarray(np.sqrt(lam)[..., :, None] * np.swapaxes(psi, -1, -2))


def center_vectors(k, train_col_means, train_grand_mean):
    """Center normalized kernel vectors against the training Gram matrix.

    ``k`` holds columns ``kappa'(x_train_j, x)`` along axis -2, shape
    ``(..., n, m)``; ``train_col_means`` is ``K' 1 / n`` and
    ``train_grand_mean`` is ``1^T K' 1 / n^2``.
    """
    return (
        k
        - train_col_means[..., :, None]
        - k.mean(axis=-2, keepdims=True)
        + np.asarray(train_grand_mean)[..., None, None]
    )


# -- objective -------------------------------------------------------------

def _kterms(theta, k):
    tk = np.einsum("...np,...n->...p", theta, k)
    return tk, _sqnorm(tk)


def _check(theta, k, k_self):
    if theta.ndim < 2 or k.shape[-1] != theta.shape[-2] or k.shape[:-1] != theta.shape[:-2]:
        raise ShapeError(f"coefficients {theta.shape} do not match kernel vector {k.shape}")
    if np.shape(k_self) != k.shape[:-1]:
        raise ShapeError(f"k_self shape {np.shape(k_self)} != {k.shape[:-1]}")


def objective_f_kernel(theta, k, k_self, q: int, consts: SsimConstants = DEFAULT_CONSTS):
    """``(k_self - k^T Theta Theta^T k) / (k_self + k^T Theta Theta^T k + c)``; ``c`` uses block length ``q``."""
    theta = np.asarray(theta, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    _check(theta, k, k_self)
    _, tt = _kterms(theta, k)
    return (k_self - tt) / (k_self + tt + consts.c(q))


def gradient_f_kernel(theta, k, k_self, q: int, consts: SsimConstants = DEFAULT_CONSTS):
    """``-2 (1 + f) / (k_self + k^T Theta Theta^T k + c) * k k^T Theta``."""
    theta = np.asarray(theta, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    _check(theta, k, k_self)
    tk, tt = _kterms(theta, k)
    den = k_self + tt + consts.c(q)
    coef = -2.0 * (1.0 + (k_self - tt) / den) / den
    return coef[..., None, None] * k[..., :, None] * tk[..., None, :]


# -- ADMM ------------------------------------------------------------------

@dataclass
class KernelAdmmState:
    """``Theta`` (coefficients), ``W`` (split copy of ``Delta Theta``) and dual ``J``; all ``(b, n, p)``."""

    Theta: np.ndarray
    W: np.ndarray
    J: np.ndarray

    def __post_init__(self):
        if not (self.Theta.shape == self.W.shape == self.J.shape) or self.Theta.ndim != 3:
            raise ShapeError(f"state shapes disagree: {self.Theta.shape} {self.W.shape} {self.J.shape}")

    def copy(self) -> "KernelAdmmState":
        return KernelAdmmState(self.Theta.copy(), self.W.copy(), self.J.copy())


def init_kernel_state(delta, p: int, seed: int) -> KernelAdmmState:
    """Gaussian ``Theta`` with the columns of ``Delta Theta`` scaled to unit norm."""
    b, n, _ = delta.shape
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((b, n, p))
    norms = np.linalg.norm(delta @ theta, axis=-2, keepdims=True)
    theta = theta / np.where(norms > 0, norms, 1.0)
    W = prox_orthonormal(delta @ theta)
    return KernelAdmmState(theta, W, np.zeros_like(W))


def _kstep_chunk(theta, W, J, delta, k, k_self, q, rho, eta, steps, consts):
    deltaT = np.swapaxes(delta, -1, -2)
    th = theta
    for _ in range(steps):
        th = th - eta * gradient_f_kernel(th, k, k_self, q, consts) - eta * rho * (deltaT @ (delta @ th - W + J))
    dth = delta @ th
    Wn = prox_orthonormal(dth + J)
    Jn = J + (dth - Wn)
    return th, Wn, Jn


def admm_step_kernel(
    state: KernelAdmmState,
    k,
    k_self,
    delta,
    q: int,
    cfg: TrainConfig,
    consts: SsimConstants = DEFAULT_CONSTS,
    threads: int | None = 1,
) -> KernelAdmmState:
    """One ADMM iteration over all blocks of one image.

    ``k`` is ``(b, n)`` (the image's centered kernel vector per block),
    ``k_self`` is ``(b,)`` and ``delta`` is ``(b, n, n)``.
    """
    k = np.asarray(k, dtype=np.float64)
    k_self = np.asarray(k_self, dtype=np.float64)
    if k.shape != state.Theta.shape[:2] or delta.shape != k.shape + k.shape[-1:]:
        raise ShapeError(f"kernel inputs {k.shape}/{delta.shape} do not match state {state.Theta.shape}")
    out = KernelAdmmState(np.empty_like(state.Theta), np.empty_like(state.W), np.empty_like(state.J))

    def run(sl):
        out.Theta[sl], out.W[sl], out.J[sl] = _kstep_chunk(
            state.Theta[sl], state.W[sl], state.J[sl], delta[sl], k[sl], k_self[sl],
            q, cfg.rho, cfg.eta, cfg.gd_steps_per_admm, consts,
        )

    for_each_chunk(run, k.shape[0], threads)
    return out


def whiten(theta, K):
    """``Theta (Theta^T K Theta)^(-1/2)``: the nearest coefficients meeting the constraint.

    Equivalent to replacing ``Delta Theta`` by its orthonormal polar factor.
    """
    gram = np.swapaxes(theta, -1, -2) @ K @ theta
    lam, vec = np.linalg.eigh(0.5 * (gram + np.swapaxes(gram, -1, -2)))
    if lam.min() <= 1e-12 * max(1.0, lam.max()):
        raise RankDeficient(f"Theta^T K Theta is singular (eigenvalue {lam.min():.3g})")
    inv_sqrt = (vec / np.sqrt(lam)[..., None, :]) @ np.swapaxes(vec, -1, -2)
    return theta @ inv_sqrt


def constraint_residual(theta, K) -> float:
    """``max |Theta^T K Theta - I|`` across blocks."""
    gram = np.swapaxes(theta, -1, -2) @ K @ theta
    return float(np.abs(gram - np.eye(theta.shape[-1])).max())


# -- model -----------------------------------------------------------------

@dataclass
class KernelStats:
    """Everything needed to turn new blocks into centered kernel vectors.

    ``train_blocks`` are the raw blocks ``(b, n, q)``; ``raw_diag`` is
    ``kappa(x_j, x_j)`` ``(b, n)``; ``col_means`` is ``K' 1 / n`` ``(b, n)``
    and ``grand_mean`` is ``(b,)``, both of the normalized uncentered kernel.
    """

    train_blocks: np.ndarray
    raw_diag: np.ndarray
    col_means: np.ndarray
    grand_mean: np.ndarray

    @property
    def n(self) -> int:
        return self.train_blocks.shape[1]


@dataclass
class ProcessedKernel:
    """``K`` is the normalized, double-centered kernel ``(b, n, n)`` (after PSD
    projection under ``psd="clip"``); ``Delta^T Delta = K``."""

    K: np.ndarray
    delta: np.ndarray
    stats: KernelStats
    negative_mass: float = 0.0


def process_kernel(train_blocks, kcfg: KernelConfig) -> ProcessedKernel:
    """Build, normalize, double-center and factor the per-block training kernels."""
    X = np.asarray(train_blocks, dtype=np.float64)
    if X.ndim != 3:
        raise ShapeError(f"expected (b, n, q) training blocks, got {X.shape}")
    if X.shape[1] < 2:
        raise DimensionError("kernel methods need at least 2 training images (centering annihilates n=1)")
    Kraw = kernel_matrix(X, None, kcfg)
    diag = np.diagonal(Kraw, axis1=-2, axis2=-1).copy()
    Kn = normalize_kernel(Kraw, on_zero="zero") if kcfg.normalize else Kraw
    del Kraw
    stats = KernelStats(X, np.ascontiguousarray(diag), Kn.mean(axis=-1), Kn.mean(axis=(-2, -1)))
    Kc = double_center(Kn)
    del Kn
    kcfg = kcfg.resolved(X.shape[2])
    delta = delta_factor(Kc, clip=kcfg.psd == "clip")
    neg = 0.0
    if kcfg.psd == "clip":
        lam = np.linalg.eigvalsh(Kc)
        neg = float(-lam.clip(max=0).sum() / max(lam.clip(min=0).sum(), 1e-300))
        Kc = np.swapaxes(delta, -1, -2) @ delta
    return ProcessedKernel(Kc, delta, stats, neg)


def stats_from_blocks(train_blocks, kcfg: KernelConfig) -> KernelStats:
    """Recompute :class:`KernelStats` from stored raw training blocks."""
    X = np.asarray(train_blocks, dtype=np.float64)
    Kn = kernel_matrix(X, None, kcfg)
    if kcfg.normalize:
        Kn = normalize_kernel(Kn, on_zero="zero")
    return KernelStats(X, kernel_self(X, kcfg), Kn.mean(axis=-1), Kn.mean(axis=(-2, -1)))


def centered_kernel_vectors(stats: KernelStats, raw_blocks, kcfg: KernelConfig):
    """Normalized, centered kernel vectors of new raw blocks ``(b, m, q)`` -> ``(b, n, m)``,
    together with their centered self-similarities ``(b, m)``."""
    Y = np.asarray(raw_blocks, dtype=np.float64)
    X = stats.train_blocks
    if Y.ndim != 3 or Y.shape[0] != X.shape[0] or Y.shape[2] != X.shape[2]:
        raise ShapeError(f"blocks {Y.shape} do not match training blocks {X.shape}")
    kn = kernel_matrix(X, Y, kcfg)
    if kcfg.normalize:
        s_train = _inv_sqrt_diag(stats.raw_diag, "zero")
        s_new = _inv_sqrt_diag(kernel_self(Y, kcfg), "zero")
        kn = kn * s_train[..., :, None] * s_new[..., None, :]
        self_n = np.where(s_new > 0, 1.0, 0.0)
    else:
        self_n = kernel_self(Y, kcfg)
    kc = center_vectors(kn, stats.col_means, stats.grand_mean)
    # centered self-similarity: k'(x,x) - 2 mean_j k'(x_j,x) + 1^T K' 1 / n^2
    kself = self_n - 2.0 * kn.mean(axis=-2) + stats.grand_mean[..., None]
    return kc, kself


@dataclass
class KernelIscaModel:
    theta: np.ndarray  # (b, n, p)
    delta: np.ndarray  # (b, n, n)
    stats: KernelStats
    kernel: KernelConfig
    block_side: int
    grid: tuple[int, int]
    config: TrainConfig
    convergence_log: list[float] = field(default_factory=list)
    initial_error: float = float("nan")
    admm_constraint_residual: float = float("nan")
    negative_mass: float = 0.0
    state: KernelAdmmState | None = field(default=None, repr=False, compare=False)

    kind = "kernel_isca"

    @property
    def n(self) -> int:
        return self.theta.shape[1]

    @property
    def p(self) -> int:
        return self.theta.shape[2]

    @property
    def b(self) -> int:
        return self.theta.shape[0]

    @property
    def q(self) -> int:
        return self.block_side**2

    def kernel_gram(self):
        """Processed training kernel ``Delta^T Delta``."""
        return np.swapaxes(self.delta, -1, -2) @ self.delta

    def check_blocks(self, bs: BlockSet) -> None:
        if bs.grid != tuple(self.grid) or bs.block_side != self.block_side:
            raise ShapeError(
                f"block grid {bs.grid}/{bs.block_side} does not match model {self.grid}/{self.block_side}"
            )


def raw_block_stack(images, block_side: int) -> np.ndarray:
    """Raw blocks of ``n`` images arranged per block position, shape ``(b, n, q)``."""
    try:
        tiles = [tile_blocks(as_gray_image(im), block_side) for im in images]
        return np.ascontiguousarray(np.stack(tiles, axis=1))
    except ValueError as exc:
        if isinstance(exc, DimensionError) or "same shape" in str(exc):
            raise DimensionMismatch(str(exc)) from None
        raise


def _mean_error(theta, K, kdiag, q, consts):
    # column j of K is image j's kernel vector: f over all (block, image) pairs
    tk = np.swapaxes(theta, -1, -2) @ K  # (b, p, n)
    tt = _sqnorm(np.swapaxes(tk, -1, -2))
    return float(((kdiag - tt) / (kdiag + tt + consts.c(q))).mean())


def train_kernel(
    images,
    kcfg: KernelConfig = KernelConfig(),
    cfg: TrainConfig = TrainConfig(rho=0.1),
    consts: SsimConstants = DEFAULT_CONSTS,
    block_side: int = 8,
    threads: int | None = 1,
) -> KernelIscaModel:
    """Kernel ISCA over a set of images, one ADMM step per image per epoch.

    The loop mirrors :func:`isca.admm.train`. The stored coefficients are
    whitened so that ``Theta^T K Theta = I`` holds exactly; the residual of
    the raw ADMM iterate is kept in ``admm_constraint_residual``.
    """
    images = list(images)
    if not images:
        raise EmptyDataset("no training images")
    X = raw_block_stack(images, block_side)
    b, n, q = X.shape
    cfg.validate()
    if n < 2:
        raise DimensionError("kernel ISCA needs at least 2 training images")
    if cfg.p > n - 1:
        raise ValueError(f"p={cfg.p} exceeds the centered kernel rank n-1={n - 1}")
    kcfg = kcfg.resolved(q)
    pk = process_kernel(X, kcfg)
    K, delta = pk.K, pk.delta
    kdiag = np.diagonal(K, axis1=-2, axis2=-1)
    state = init_kernel_state(delta, cfg.p, cfg.seed)
    initial = _mean_error(state.Theta, K, kdiag, q, consts)
    history: list[float] = []
    for epoch in range(cfg.max_epochs):
        for j in range(n):
            state = admm_step_kernel(state, K[:, :, j], kdiag[:, j], delta, q, cfg, consts, threads)
        err = _mean_error(whiten(state.Theta, K), K, kdiag, q, consts)
        history.append(err)
        log.info("kernel isca (%s) epoch %d: mean SSIM error %.6g", kcfg.kind, epoch + 1, err)
        if err < cfg.epsilon:
            break
    h, w = np.shape(images[0])
    return KernelIscaModel(
        theta=whiten(state.Theta, K),
        delta=delta,
        stats=pk.stats,
        kernel=kcfg,
        block_side=block_side,
        grid=(h // block_side, w // block_side),
        config=cfg,
        convergence_log=history,
        initial_error=initial,
        admm_constraint_residual=constraint_residual(state.Theta, K),
        negative_mass=pk.negative_mass,
        state=state,
    )


def project_kernel(model: KernelIscaModel, bs: BlockSet) -> np.ndarray:
    """``Theta_i^T k_i`` with the out-of-sample centered kernel vector, shape ``(b, p)``."""
    model.check_blocks(bs)
    kc, _ = centered_kernel_vectors(model.stats, bs.raw_blocks()[:, None, :], model.kernel)
    return np.einsum("bnp,bn->bp", model.theta, kc[..., 0])


def subspace_residual(model: KernelIscaModel) -> float:
    """Orthonormality residual of ``Delta Theta`` (equals the constraint residual)."""
    return orthonormality_residual(model.delta @ model.theta)
