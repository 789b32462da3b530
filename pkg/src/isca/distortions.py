"""Iso-error distortion datasets.

Six distortion families are each tuned by a single scalar parameter until the
image hits a target MSE (8-bit units) against the source. Calibration is done
on the 16-bit quantized output, so a dataset written as 16-bit PGM carries
exactly the measured error. An 8-bit grid is too coarse: a uniform luminance
shift of k levels gives MSE close to k*k, which misses most target levels.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import correlate1d

from .blocks import as_gray_image, quantize8, quantize16
from .errors import CalibrationFailed
from .ssim import mse

log = logging.getLogger(__name__)

FAMILIES = (
    "original",
    "contrast_stretch",
    "gaussian_noise",
    "luminance_enhance",
    "gaussian_blur",
    "impulse_noise",
    "jpeg_distortion",
)
LABELS = {name: i for i, name in enumerate(FAMILIES)}
LETTERS = "OCGLBIJ"

TRAIN_LEVELS = tuple(float(45 * k) for k in range(1, 21))
TEST_MSE = 500.0

# tolerance accepted by callers, and the tighter one bisection aims for
MSE_TOL = 0.01
_AIM_TOL = 0.004
_MAX_ITER = 60

JPEG_LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class DistortionSpec:
    """What to apply. For a combined spec ``target_mse`` is the total error; the
    first family is calibrated to half of it and ``second`` (whose own
    ``target_mse`` is ignored) tops it up."""

    kind: str
    target_mse: float = 0.0
    seed: int = 0
    second: "DistortionSpec | None" = None

    def __post_init__(self):
        if self.kind not in LABELS:
            raise ValueError(f"unknown distortion {self.kind!r}")
        if self.target_mse < 0:
            raise ValueError("target_mse must be >= 0")
        if self.kind == "original" and (self.target_mse != 0 or self.second is not None):
            raise ValueError("original images carry no distortion")

    @property
    def label(self) -> int:
        return LABELS[self.kind]

    @property
    def name(self) -> str:
        return self.kind if self.second is None else f"{self.kind}+{self.second.kind}"

    @property
    def letters(self) -> str:
        s = LETTERS[self.label]
        return s if self.second is None else f"{s}+{LETTERS[self.second.label]}"


# -- renderers: (image, parameter, rng) -> distorted float image ----------

def contrast_stretch(img, t):
    return np.clip(0.5 + (1.0 + t) * (img - 0.5), 0.0, 1.0)


def luminance_enhance(img, delta):
    return np.clip(img + delta, 0.0, 1.0)


def add_gaussian_noise(img, sigma, noise):
    return np.clip(img + sigma * noise, 0.0, 1.0)


def gaussian_blur(img, sigma):
    if sigma <= 0:
        return img.copy()
    radius = math.ceil(3 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(t**2) / (2 * sigma**2))
    w /= w.sum()
    out = correlate1d(img, w, axis=0, mode="reflect")
    return correlate1d(out, w, axis=1, mode="reflect")


def jpeg_quantize(img, scale):
    """Blockwise 8x8 DCT, quantization by the luminance table times ``scale``, inverse DCT."""
    if scale <= 1e-9:
        return img.copy()
    h, w = img.shape
    ph, pw = -h % 8, -w % 8
    y = np.pad(img * 255.0 - 128.0, ((0, ph), (0, pw)), mode="edge")
    H, W = y.shape
    tiles = y.reshape(H // 8, 8, W // 8, 8).transpose(0, 2, 1, 3)
    coef = dctn(tiles, type=2, axes=(-2, -1), norm="ortho")
    step = JPEG_LUMA_TABLE * scale
    coef = np.round(coef / step) * step
    tiles = idctn(coef, type=2, axes=(-2, -1), norm="ortho")
    y = tiles.transpose(0, 2, 1, 3).reshape(H, W)[:h, :w]
    return np.clip((y + 128.0) / 255.0, 0.0, 1.0)


def impulse_noise(img, count, order, salt):
    out = img.copy().ravel()
    idx = order[:count]
    out[idx] = salt[idx]
    return out.reshape(img.shape)


# -- calibration ----------------------------------------------------------

# (initial upper bracket, largest allowed parameter)
_BRACKETS = {
    "contrast_stretch": (1.0, 1e4),
    "gaussian_noise": (0.1, 1e3),
    "luminance_enhance": (0.1, 1.0),
    "gaussian_blur": (1.0, None),
    "jpeg_distortion": (1.0, 1e4),
}


def _within(value, target, tol):
    return abs(value - target) <= tol * target


def _bisect(render, target, ref, hi, hi_max, what):
    def err(param):
        out = quantize16(render(param))
        return mse(out, ref), out

    lo = 0.0
    f_hi, out_hi = err(hi)
    while f_hi < target:
        if hi >= hi_max:
            raise CalibrationFailed(f"{what}: MSE {f_hi:.2f} at the largest parameter {hi:g} < target {target:g}")
        hi = min(hi * 2.0, hi_max)
        f_hi, out_hi = err(hi)
    best = (abs(f_hi - target), hi, f_hi, out_hi)
    for _ in range(_MAX_ITER):
        if _within(best[2], target, _AIM_TOL):
            break
        mid = 0.5 * (lo + hi)
        f_mid, out_mid = err(mid)
        if abs(f_mid - target) < best[0]:
            best = (abs(f_mid - target), mid, f_mid, out_mid)
        if f_mid < target:
            lo = mid
        else:
            hi = mid
    _, param, realized, out = best
    if not _within(realized, target, MSE_TOL):
        raise CalibrationFailed(f"{what}: best MSE {realized:.3f} misses target {target:g} by more than 1%")
    return out, param


def _impulse(img, ref, target, rng, what):
    # exact search over the number of corrupted pixels, in a seeded order,
    # then a greedy top-up with small contributions for sub-pixel granularity
    n = img.size
    order = rng.permutation(n)
    salt = np.where(rng.random(n) < 0.5, 1.0, 0.0)
    flat, rflat = img.ravel(), ref.ravel()
    scale = 255.0**2 / n
    delta = ((salt[order] - rflat[order]) ** 2 - (flat[order] - rflat[order]) ** 2) * scale
    base = mse(img, ref)
    total = base + np.concatenate([[0.0], np.cumsum(delta)])
    hits = np.nonzero(np.abs(total - target) <= _AIM_TOL * target)[0]
    if hits.size:
        chosen = order[: hits[0]]
    else:
        below = np.nonzero(total <= target)[0]
        k = int(below[-1]) if below.size else 0
        if k == n:
            raise CalibrationFailed(f"{what}: corrupting every pixel gives MSE {total[-1]:.2f} < {target:g}")
        picked, acc = list(order[:k]), total[k]
        for j in range(k, n):
            if acc + delta[j] <= target * (1 + _AIM_TOL):
                picked.append(order[j])
                acc += delta[j]
                if acc >= target * (1 - _AIM_TOL):
                    break
        chosen = np.array(picked, dtype=np.int64)
    out = flat.copy()
    out[chosen] = salt[chosen]
    out = out.reshape(img.shape)
    realized = mse(out, ref)
    if not _within(realized, target, MSE_TOL):
        raise CalibrationFailed(f"{what}: best MSE {realized:.3f} misses target {target:g} by more than 1%")
    return out, len(chosen) / n


def _calibrate(kind, img, ref, target, seed):
    """Distort ``img`` so that its MSE against ``ref`` equals ``target``."""
    what = f"{kind} @ MSE {target:g}"
    rng = np.random.default_rng(seed)
    if kind == "impulse_noise":
        return _impulse(img, ref, target, rng, what)
    if kind == "gaussian_noise":
        noise = rng.standard_normal(img.shape)
        render = lambda s: add_gaussian_noise(img, s, noise)  # noqa: E731
    elif kind == "contrast_stretch":
        render = lambda t: contrast_stretch(img, t)  # noqa: E731
    elif kind == "luminance_enhance":
        render = lambda d: luminance_enhance(img, d)  # noqa: E731
    elif kind == "gaussian_blur":
        render = lambda s: gaussian_blur(img, s)  # noqa: E731
    elif kind == "jpeg_distortion":
        render = lambda s: jpeg_quantize(img, s)  # noqa: E731
    else:
        raise ValueError(kind)
    hi, hi_max = _BRACKETS[kind]
    if hi_max is None:
        hi_max = 4.0 * max(img.shape)
    return _bisect(render, target, ref, hi, hi_max, what)


def apply(img, spec: DistortionSpec) -> np.ndarray:
    """Distorted copy of ``img`` whose MSE to ``img`` is within 1% of the target.

    Deterministic given ``spec``. Raises :class:`CalibrationFailed` when the
    family cannot reach the target on this image.
    """
    src = quantize8(as_gray_image(img))
    if spec.kind == "original" or spec.target_mse == 0:
        return src
    if spec.second is None:
        out, _ = _calibrate(spec.kind, src, src, spec.target_mse, spec.seed)
        return out
    first, _ = _calibrate(spec.kind, src, src, spec.target_mse / 2, spec.seed)
    out, _ = _calibrate(spec.second.kind, first, src, spec.target_mse, spec.second.seed)
    return out


@dataclass
class LabeledImage:
    image: np.ndarray = field(repr=False)
    label: int
    family: str
    target_mse: float
    realized_mse: float
    seed: int
    letters: str = ""

    @property
    def filename(self) -> str:
        return f"{self.label}_{self.family}_{self.target_mse:g}.pgm"


def derive_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


def _labeled(src, spec: DistortionSpec) -> LabeledImage:
    out = apply(src, spec)
    return LabeledImage(
        image=out,
        label=spec.label,
        family=spec.name,
        target_mse=spec.target_mse,
        realized_mse=mse(out, quantize8(src)),
        seed=spec.seed,
        letters=spec.letters,
    )


def training_specs(seed: int) -> list[DistortionSpec]:
    specs = [DistortionSpec("original")]
    for kind in FAMILIES[1:]:
        for k, level in enumerate(TRAIN_LEVELS):
            specs.append(DistortionSpec(kind, level, derive_seed(seed, LABELS[kind], k)))
    return specs


def out_of_sample_specs(seed: int) -> list[DistortionSpec]:
    pairs = [
        ("contrast_stretch", None),
        ("gaussian_noise", None),
        ("luminance_enhance", None),
        ("gaussian_blur", None),
        ("impulse_noise", None),
        ("jpeg_distortion", None),
        ("gaussian_blur", "gaussian_noise"),
        ("gaussian_blur", "luminance_enhance"),
        ("impulse_noise", "luminance_enhance"),
        ("jpeg_distortion", "gaussian_noise"),
        ("jpeg_distortion", "luminance_enhance"),
        ("jpeg_distortion", "contrast_stretch"),
    ]
    specs = []
    for i, (first, second) in enumerate(pairs, start=1):
        snd = None if second is None else DistortionSpec(second, 0.0, derive_seed(seed, 2000 + i))
        specs.append(DistortionSpec(first, TEST_MSE, derive_seed(seed, 1000 + i), snd))
    return specs


def make_training_set(src, seed: int = 0) -> list[LabeledImage]:
    """Original plus six families at 20 MSE levels each: 121 labeled images."""
    return [_labeled(src, spec) for spec in training_specs(seed)]


def make_test_set(src, seed: int = 0) -> list[LabeledImage]:
    """The twelve out-of-sample images at MSE 500, six single and six combined distortions."""
    return [_labeled(src, spec) for spec in out_of_sample_specs(seed)]
