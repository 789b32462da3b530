"""Grayscale image I/O and non-overlapping block tiling.

Images are plain 2-D ``float64`` arrays of shape ``(height, width)`` with
values in [0, 1]. Blocks are traversed row-major over the block grid and each
``s x s`` tile is flattened row-major into a length ``q = s*s`` vector.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError

# Rec. 601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def as_gray_image(data) -> np.ndarray:
    """Validate and return ``data`` as a float64 grayscale image."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise DimensionError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


@dataclass(frozen=True)
class BlockSet:
    """An image cut into centered blocks.

    ``blocks`` has shape ``(b, q)``; ``means`` holds the per-block mean that
    was subtracted. ``grid`` is ``(rows, cols)`` of the tiling and
    ``source_dims`` is ``(width, height)``.
    """

    blocks: np.ndarray
    means: np.ndarray
    block_side: int
    grid: tuple[int, int]
    source_dims: tuple[int, int]

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def q(self) -> int:
        return self.blocks.shape[1]

    def raw_blocks(self) -> np.ndarray:
        """Blocks with their means added back, shape ``(b, q)``."""
        return self.blocks + self.means[:, None]

    def with_blocks(self, blocks: np.ndarray) -> "BlockSet":
        blocks = np.asarray(blocks, dtype=np.float64)
        if blocks.shape != self.blocks.shape:
            raise DimensionError(f"block array shape {blocks.shape} != {self.blocks.shape}")
        return BlockSet(blocks, self.means, self.block_side, self.grid, self.source_dims)


def tile_blocks(img: np.ndarray, block_side: int) -> np.ndarray:
    """Raw (uncentered) blocks of ``img`` as a ``(b, q)`` array."""
    h, w = img.shape
    s = block_side
    if s < 2:
        raise DimensionError(f"block_side must be >= 2, got {s}")
    if h % s or w % s:
        raise DimensionError(f"image {w}x{h} is not divisible by block side {s}")
    rows, cols = h // s, w // s
    return img.reshape(rows, s, cols, s).transpose(0, 2, 1, 3).reshape(rows * cols, s * s)


def untile_blocks(blocks: np.ndarray, block_side: int, grid: tuple[int, int]) -> np.ndarray:
    rows, cols = grid
    s = block_side
    return blocks.reshape(rows, cols, s, s).transpose(0, 2, 1, 3).reshape(rows * s, cols * s)


def partition(img, block_side: int) -> BlockSet:
    img = as_gray_image(img)
    raw = tile_blocks(img, block_side)
    means = raw.mean(axis=1)
    h, w = img.shape
    return BlockSet(
        blocks=raw - means[:, None],
        means=means,
        block_side=block_side,
        grid=(h // block_side, w // block_side),
        source_dims=(w, h),
    )


def reassemble(bs: BlockSet, clamp: bool = True) -> np.ndarray:
    rows, cols = bs.grid
    if bs.blocks.shape != (rows * cols, bs.block_side**2) or bs.means.shape != (rows * cols,):
        raise DimensionError("BlockSet arrays disagree with its grid")
    img = untile_blocks(bs.raw_blocks(), bs.block_side, bs.grid)
    if clamp:
        img = np.clip(img, 0.0, 1.0)
    return img


def stack_blocks(images, block_side: int) -> tuple[np.ndarray, np.ndarray]:
    """Centered blocks and means for a list of images, shapes ``(n, b, q)`` and ``(n, b)``."""
    sets = [partition(im, block_side) for im in images]
    shapes = {bs.grid for bs in sets}
    if len(shapes) > 1:
        raise DimensionError(f"images have differing block grids: {sorted(shapes)}")
    return np.stack([bs.blocks for bs in sets]), np.stack([bs.means for bs in sets])


# -- file I/O -------------------------------------------------------------

def _pgm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(buf):
            raise FormatError("truncated PGM header")
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(buf) and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
                pos += 1
            tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from raster data
    return tokens, pos + 1


def _read_pgm(buf: bytes) -> np.ndarray:
    (magic, w, h, maxval), offset = _pgm_tokens(buf, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"bad PGM header: {exc}") from None
    if not (0 < maxval < 65536) or w <= 0 or h <= 0:
        raise FormatError(f"unsupported PGM header {w}x{h} maxval={maxval}")
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        need = w * h * dtype.itemsize
        raster = buf[offset : offset + need]
        if len(raster) < need:
            raise FormatError("truncated PGM raster")
        values = np.frombuffer(raster, dtype=dtype).reshape(h, w)
    elif magic == b"P2":
        values = np.array(buf[offset - 1 :].split()[: w * h], dtype=np.int64)
        if values.size < w * h:
            raise FormatError("truncated PGM raster")
        values = values.reshape(h, w)
    else:
        raise FormatError(f"not a grayscale PGM (magic {magic!r})")
    return values.astype(np.float64) / maxval


def _read_with_pillow(path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - Pillow is optional
        raise FormatError(f"reading {path} needs Pillow") from exc
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                return arr / (65535.0 if arr.max() > 255 else 255.0)
            if im.mode == "L":
                return np.asarray(im, dtype=np.float64) / 255.0
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise FormatError(f"cannot decode {path}: {exc}") from None
    return np.clip(rgb @ np.array(LUMA_WEIGHTS), 0.0, 1.0)


def load_image(path) -> np.ndarray:
    """Read a PGM (P5/P2, 8 or 16 bit) or, via Pillow, a PNG/other image."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] in (b"P5", b"P2"):
        return _read_pgm(buf)
    return _read_with_pillow(path)


def to_uint8(img) -> np.ndarray:
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def to_uint16(img) -> np.ndarray:
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 65535.0).astype(np.uint16)


def quantize8(img) -> np.ndarray:
    """Round an image onto the 8-bit grid, staying in float [0, 1]."""
    return to_uint8(img).astype(np.float64) / 255.0


def quantize16(img) -> np.ndarray:
    return to_uint16(img).astype(np.float64) / 65535.0


def save_image(img, path, bits: int = 8) -> None:
    """Write ``img`` as a binary PGM (P5), 8-bit by default or 16-bit big-endian."""
    img = as_gray_image(img)
    h, w = img.shape
    if bits == 8:
        maxval, raster = 255, to_uint8(img).tobytes()
    elif bits == 16:
        maxval, raster = 65535, to_uint16(img).astype(">u2").tobytes()
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(raster)
    os.replace(tmp, path)


def synthetic_image(size: int = 512, seed: int = 7) -> np.ndarray:
    """Deterministic textured test image, used when no source image is given.

    Smooth shading, soft-edged shapes, oriented gratings and a seeded
    band-limited texture, kept inside [0.04, 0.96] so that no region is flat
    or saturated. Quantized to 8 bits.
    """
    from scipy.ndimage import gaussian_filter

    t = (np.arange(size) + 0.5) / size
    y, x = np.meshgrid(t, t, indexing="ij")
    img = 0.35 + 0.2 * x + 0.1 * np.sin(2 * np.pi * (1.5 * y + 0.5 * x))
    img += 0.07 * np.sin(2 * np.pi * 9 * (x * np.cos(0.6) + y * np.sin(0.6)))
    img += 0.04 * np.sin(2 * np.pi * 37 * (x * np.cos(2.1) + y * np.sin(2.1)))

    def soft(d):
        return 1.0 / (1.0 + np.exp(-d * size / 3.0))

    img += 0.25 * soft(0.18 - np.hypot(x - 0.32, y - 0.38))
    img -= 0.22 * soft(0.14 - np.maximum(np.abs(x - 0.72), 0.7 * np.abs(y - 0.66)))
    img += 0.18 * soft(0.03 - np.abs(y - (0.9 - 0.8 * x)))
    rng = np.random.default_rng(seed)
    for sigma, amp in ((size / 64, 0.5), (size / 256, 0.25), (0.8, 0.06)):
        tex = gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
        img += amp * 0.1 * tex / tex.std()
    lo, hi = np.percentile(img, [0.5, 99.5])
    img = 0.04 + 0.92 * (img - lo) / (hi - lo)
    return quantize8(np.clip(img, 0.04, 0.96))
