"""SSIM between blocks, the zero-mean SSIM distance, and image-level helpers.

All block functions work along the last axis, so stacks of blocks with shape
``(..., q)`` are evaluated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import tile_blocks
from .errors import DimensionError, LengthMismatch, NotCentered

CENTER_TOL = 1e-9


@dataclass(frozen=True)
class SsimConstants:
    """Stabilizing constants for dynamic range ``l`` (1 for [0, 1] images)."""

    l: float = 1.0

    @property
    def c1(self) -> float:
        return (0.01 * self.l) ** 2

    @property
    def c2(self) -> float:
        return (0.03 * self.l) ** 2

    @property
    def c3(self) -> float:
        return self.c2 / 2

    def c(self, q: int) -> float:
        """Constant of the zero-mean form, ``(q - 1) * c2``."""
        if q < 2:
            raise ValueError(f"block length must be >= 2, got {q}")
        return (q - 1) * self.c2


DEFAULT_CONSTS = SsimConstants()


def _pair(x1, x2) -> tuple[np.ndarray, np.ndarray]:
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise LengthMismatch(f"block shapes differ: {x1.shape} vs {x2.shape}")
    if x1.shape[-1] < 2:
        raise LengthMismatch("blocks need at least 2 samples")
    return x1, x2


def ssim(x1, x2, consts: SsimConstants = DEFAULT_CONSTS):
    """SSIM as the product of the luminance and contrast-structure factors.

    Variances and covariance use the ``q - 1`` divisor. Since ``c2 = 2 c3``
    the contrast and structure factors fold into one.
    """
    x1, x2 = _pair(x1, x2)
    q = x1.shape[-1]
    mu1 = x1.mean(axis=-1)
    mu2 = x2.mean(axis=-1)
    d1 = x1 - mu1[..., None]
    d2 = x2 - mu2[..., None]
    var1 = np.einsum("...i,...i->...", d1, d1) / (q - 1)
    var2 = np.einsum("...i,...i->...", d2, d2) / (q - 1)
    cov = np.einsum("...i,...i->...", d1, d2) / (q - 1)
    s1 = (2 * mu1 * mu2 + consts.c1) / (mu1**2 + mu2**2 + consts.c1)
    s2 = (2 * cov + consts.c2) / (var1 + var2 + consts.c2)
    return s1 * s2


def ssim_distance(x1, x2, consts: SsimConstants = DEFAULT_CONSTS, check: bool = True):
    """``1 - SSIM`` for zero-mean blocks: ``|x1-x2|^2 / (|x1|^2 + |x2|^2 + c)``.

    The value is not bounded by 1; anti-correlated blocks approach 2.
    """
    x1, x2 = _pair(x1, x2)
    if check:
        worst = max(np.abs(x1.mean(axis=-1)).max(), np.abs(x2.mean(axis=-1)).max())
        if worst > CENTER_TOL:
            raise NotCentered(f"block mean {worst:.3g} exceeds tolerance {CENTER_TOL}")
    c = consts.c(x1.shape[-1])
    diff = x1 - x2
    num = np.einsum("...i,...i->...", diff, diff)
    den = np.einsum("...i,...i->...", x1, x1) + np.einsum("...i,...i->...", x2, x2) + c
    return num / den


def _same_dims(img1, img2) -> tuple[np.ndarray, np.ndarray]:
    img1 = np.asarray(img1, dtype=np.float64)
    img2 = np.asarray(img2, dtype=np.float64)
    if img1.shape != img2.shape:
        raise DimensionError(f"image shapes differ: {img1.shape} vs {img2.shape}")
    return img1, img2


def mse(img1, img2) -> float:
    """Mean squared error in 8-bit units (pixel values scaled by 255)."""
    img1, img2 = _same_dims(img1, img2)
    diff = (img1 - img2) * 255.0
    return float(np.mean(diff * diff))


def block_ssim_map(img1, img2, block_side: int = 8, consts: SsimConstants = DEFAULT_CONSTS) -> np.ndarray:
    """Per-block SSIM over the non-overlapping tiling, in block order."""
    img1, img2 = _same_dims(img1, img2)
    return ssim(tile_blocks(img1, block_side), tile_blocks(img2, block_side), consts)


def mean_block_ssim(img1, img2, block_side: int = 8, consts: SsimConstants = DEFAULT_CONSTS) -> float:
    return float(block_ssim_map(img1, img2, block_side, consts).mean())
