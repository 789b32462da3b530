"""Image structural component analysis (ISCA) trained with ADMM.

Each block position ``i`` owns an orthonormal basis ``U_i`` (``q x p``) that
minimizes the SSIM distance between centered blocks and their reconstruction
``U_i U_i^T x``. The constraint ``U^T U = I`` is split off into a second
variable ``V`` and enforced by projection; ``J`` is the scaled dual.

Arrays of bases are stacked as ``(b, q, p)`` and blocks as ``(b, q)``; every
function below broadcasts over those leading axes.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ._parallel import for_each_chunk
from .blocks import BlockSet, reassemble, stack_blocks
from .errors import DimensionError, DimensionMismatch, EmptyDataset, RankDeficient, ShapeError
from .ssim import DEFAULT_CONSTS, SsimConstants

log = logging.getLogger(__name__)

RANK_TOL = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    p: int = 4
    rho: float = 1.0
    eta: float = 0.1
    epsilon: float = 1e-3
    max_epochs: int = 50
    seed: int = 0
    gd_steps_per_admm: int = 1

    def validate(self, q: int | None = None) -> "TrainConfig":
        if not self.rho > 0 or not self.eta > 0 or not self.epsilon > 0:
            raise ValueError(f"rho, eta and epsilon must be positive: {self}")
        if self.max_epochs < 1 or self.gd_steps_per_admm < 1 or self.p < 1:
            raise ValueError(f"p, max_epochs and gd_steps_per_admm must be >= 1: {self}")
        if q is not None and self.p > q:
            raise ValueError(f"p={self.p} exceeds block length q={q}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _check_shapes(U: np.ndarray, x: np.ndarray) -> None:
    if U.ndim < 2 or x.shape[-1] != U.shape[-2] or x.shape[:-1] != U.shape[:-2]:
        raise ShapeError(f"basis shape {U.shape} does not match block shape {x.shape}")


def _terms(U, x):
    Ux = np.einsum("...qp,...q->...p", U, x)
    xx = np.einsum("...q,...q->...", x, x)
    uu = np.einsum("...p,...p->...", Ux, Ux)
    return Ux, xx, uu


def objective_f(U, x, consts: SsimConstants = DEFAULT_CONSTS):
    """Closed-form SSIM reconstruction distance ``x'(I-UU')x / (x'(I+UU')x + c)``.

    Evaluated as written for any ``U``; it equals ``ssim_distance(x, UU'x)``
    only when ``U`` has orthonormal columns.
    """
    U = np.asarray(U, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_shapes(U, x)
    _, xx, uu = _terms(U, x)
    return (xx - uu) / (xx + uu + consts.c(x.shape[-1]))


def gradient_f(U, x, consts: SsimConstants = DEFAULT_CONSTS):
    """Gradient of :func:`objective_f` with respect to ``U``.

    ``-2 (1 + f) / (x'x + x'UU'x + c) * x x' U``. On the constraint set
    ``x'UU'x = |UU'x|^2``, so this is also the projected-basis formula.
    """
    U = np.asarray(U, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_shapes(U, x)
    Ux, xx, uu = _terms(U, x)
    den = xx + uu + consts.c(x.shape[-1])
    coef = -2.0 * (1.0 + (xx - uu) / den) / den
    return coef[..., None, None] * x[..., :, None] * Ux[..., None, :]


def prox_orthonormal(A):
    """Nearest matrix with orthonormal columns: all singular values set to one.

    For ``A = Q diag(s) W^T`` returns ``Q W^T``. Each left singular vector is
    sign-normalized (largest-magnitude entry nonnegative) before recombining.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 2 or A.shape[-2] < A.shape[-1]:
        raise ShapeError(f"prox needs a tall matrix (q >= p), got {A.shape}")
    Q, s, Wt = np.linalg.svd(A, full_matrices=False)
    smin = s[..., -1].min() if s.size else 0.0
    if not np.all(np.isfinite(s)) or smin <= RANK_TOL:
        raise RankDeficient(f"smallest singular value {smin:.3g} <= {RANK_TOL}")
    idx = np.abs(Q).argmax(axis=-2)[..., None, :]
    sign = np.where(np.take_along_axis(Q, idx, axis=-2) < 0, -1.0, 1.0)
    Q = Q * sign
    Wt = Wt * np.swapaxes(sign, -1, -2)
    return Q @ Wt


def orthonormality_residual(U) -> float:
    """``max |U^T U - I|`` over all stacked bases."""
    U = np.asarray(U, dtype=np.float64)
    p = U.shape[-1]
    gram = np.swapaxes(U, -1, -2) @ U
    return float(np.abs(gram - np.eye(p)).max())


@dataclass
class AdmmState:
    """Per-block primal ``U``, split copy ``V`` and scaled dual ``J``; all ``(b, q, p)``."""

    U: np.ndarray
    V: np.ndarray
    J: np.ndarray

    def __post_init__(self):
        if not (self.U.shape == self.V.shape == self.J.shape) or self.U.ndim != 3:
            raise ShapeError(f"state shapes disagree: {self.U.shape} {self.V.shape} {self.J.shape}")

    def copy(self) -> "AdmmState":
        return AdmmState(self.U.copy(), self.V.copy(), self.J.copy())


def init_state(b: int, q: int, p: int, seed: int) -> AdmmState:
    """Seeded Gaussian bases, orthonormalized; ``V = U`` and ``J = 0``."""
    rng = np.random.default_rng(seed)
    U = prox_orthonormal(rng.standard_normal((b, q, p)))
    return AdmmState(U, U.copy(), np.zeros_like(U))


def _step_chunk(U, V, J, x, rho, eta, steps, consts):
    Un = U
    for _ in range(steps):
        Un = Un - eta * gradient_f(Un, x, consts) - eta * rho * (Un - V + J)
    Vn = prox_orthonormal(Un + J)
    Jn = J + (Un - Vn)
    return Un, Vn, Jn


def admm_step(
    state: AdmmState,
    blocks,
    cfg: TrainConfig,
    consts: SsimConstants = DEFAULT_CONSTS,
    threads: int | None = 1,
) -> AdmmState:
    """One ADMM iteration for every block of one image.

    ``blocks`` is a :class:`BlockSet` or a ``(b, q)`` array of centered blocks.
    Order: gradient step on ``U`` with the old ``V, J``; projection for ``V``
    from the new ``U`` and old ``J``; dual ascent for ``J``.
    """
    x = blocks.blocks if isinstance(blocks, BlockSet) else np.asarray(blocks, dtype=np.float64)
    if x.shape != state.U.shape[:2]:
        raise ShapeError(f"blocks {x.shape} do not match state {state.U.shape}")
    out = AdmmState(np.empty_like(state.U), np.empty_like(state.V), np.empty_like(state.J))

    def run(sl):
        out.U[sl], out.V[sl], out.J[sl] = _step_chunk(
            state.U[sl], state.V[sl], state.J[sl], x[sl],
            cfg.rho, cfg.eta, cfg.gd_steps_per_admm, consts,
        )

    for_each_chunk(run, x.shape[0], threads)
    return out


def mean_reconstruction_error(bases, blocks, consts: SsimConstants = DEFAULT_CONSTS) -> float:
    """Average SSIM distance of ``(n, b, q)`` centered blocks to their reconstructions."""
    return float(objective_f(np.broadcast_to(bases, blocks.shape[:1] + bases.shape), blocks, consts).mean())


@dataclass
class IscaModel:
    bases: np.ndarray  # (b, q, p)
    block_side: int
    grid: tuple[int, int]
    config: TrainConfig
    convergence_log: list[float] = field(default_factory=list)
    initial_error: float = float("nan")
    state: AdmmState | None = field(default=None, repr=False, compare=False)

    kind = "isca"

    @property
    def q(self) -> int:
        return self.bases.shape[1]

    @property
    def p(self) -> int:
        return self.bases.shape[2]

    @property
    def b(self) -> int:
        return self.bases.shape[0]

    def check_blocks(self, bs: BlockSet) -> None:
        if bs.grid != tuple(self.grid) or bs.block_side != self.block_side:
            raise ShapeError(
                f"block grid {bs.grid}/{bs.block_side} does not match model {self.grid}/{self.block_side}"
            )


def train(
    images,
    cfg: TrainConfig = TrainConfig(),
    consts: SsimConstants = DEFAULT_CONSTS,
    block_side: int = 8,
    threads: int | None = 1,
) -> IscaModel:
    """Fit one basis per block position over a set of images.

    Images are visited one at a time, each contributing a single ADMM step to
    every block; an epoch is one pass over the set. Stops when the mean SSIM
    reconstruction error of the projected bases drops below ``cfg.epsilon``
    or after ``cfg.max_epochs`` epochs. Stored bases are ``prox(U)``.
    """
    images = list(images)
    if not images:
        raise EmptyDataset("no training images")
    try:
        X, _ = stack_blocks(images, block_side)
    except DimensionError as exc:
        raise DimensionMismatch(str(exc)) from None
    n, b, q = X.shape
    cfg.validate(q)
    state = init_state(b, q, cfg.p, cfg.seed)
    initial = mean_reconstruction_error(state.U, X, consts)
    history: list[float] = []
    for epoch in range(cfg.max_epochs):
        for j in range(n):
            state = admm_step(state, X[j], cfg, consts, threads)
        err = mean_reconstruction_error(prox_orthonormal(state.U), X, consts)
        history.append(err)
        log.info("isca epoch %d: mean SSIM error %.6g", epoch + 1, err)
        if err < cfg.epsilon:
            break
    h, w = images[0].shape
    return IscaModel(
        bases=prox_orthonormal(state.U),
        block_side=block_side,
        grid=(h // block_side, w // block_side),
        config=cfg,
        convergence_log=history,
        initial_error=initial,
        state=state,
    )


def project(model: IscaModel, bs: BlockSet) -> np.ndarray:
    """Structural components ``U_i^T x_i`` for every block, shape ``(b, p)``."""
    model.check_blocks(bs)
    return np.einsum("bqp,bq->bp", model.bases, bs.blocks)


def reconstruct_blocks(model: IscaModel, bs: BlockSet) -> BlockSet:
    coords = project(model, bs)
    return bs.with_blocks(np.einsum("bqp,bp->bq", model.bases, coords))


def reconstruct(model: IscaModel, bs: BlockSet) -> np.ndarray:
    """Image from ``U_i U_i^T x_i + mean_i``, clamped to [0, 1]."""
    return reassemble(reconstruct_blocks(model, bs))
