import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from isca.errors import DimensionError, LengthMismatch, NotCentered
from isca.ssim import DEFAULT_CONSTS, SsimConstants, mean_block_ssim, mse, ssim, ssim_distance


def three_factor_ssim(x1, x2, l=1.0):
    """Independent oracle: luminance * contrast * structure with sample statistics."""
    q = len(x1)
    c1, c2 = (0.01 * l) ** 2, (0.03 * l) ** 2
    c3 = c2 / 2
    m1, m2 = sum(x1) / q, sum(x2) / q
    v1 = sum((a - m1) ** 2 for a in x1) / (q - 1)
    v2 = sum((b - m2) ** 2 for b in x2) / (q - 1)
    cov = sum((a - m1) * (b - m2) for a, b in zip(x1, x2)) / (q - 1)
    s1, s2 = v1**0.5, v2**0.5
    lum = (2 * m1 * m2 + c1) / (m1**2 + m2**2 + c1)
    con = (2 * s1 * s2 + c2) / (v1 + v2 + c2)
    struct = (cov + c3) / (s1 * s2 + c3)
    return lum * con * struct


def test_constants():
    c = SsimConstants()
    assert c.c1 == pytest.approx(1e-4, abs=1e-18)
    assert c.c2 == pytest.approx(9e-4, abs=1e-18)
    assert c.c3 == pytest.approx(4.5e-4, abs=1e-18)
    assert c.c(64) == pytest.approx(63 * 9e-4)
    assert all(c.c(q) > 0 for q in range(2, 100))


def test_identical_is_one(rng):
    x = rng.random(64)
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-15)


def test_flat_blocks_hand_value():
    x1, x2 = np.full(4, 0.2), np.full(4, 0.8)
    expected = (2 * 0.2 * 0.8 + 1e-4) / (0.04 + 0.64 + 1e-4)
    assert ssim(x1, x2) == pytest.approx(expected, rel=1e-12)
    assert ssim(x1, x2) == pytest.approx(0.4707, abs=5e-5)


def test_matches_three_factor_oracle(rng):
    for _ in range(200):
        x1, x2 = rng.random(16), rng.random(16)
        assert abs(ssim(x1, x2) - three_factor_ssim(list(x1), list(x2))) <= 1e-12


def test_antipodal_distance_exceeds_one():
    x1 = np.array([1.0, -1.0, 0.0, 0.0])
    assert ssim_distance(x1, -x1) == pytest.approx(8 / 4.0027, rel=1e-12)
    assert ssim_distance(x1, -x1) == pytest.approx(1.99865, abs=5e-6)


def test_distance_identity_on_centered_pairs(rng):
    x1 = rng.standard_normal((1000, 64)) * 0.1
    x2 = rng.standard_normal((1000, 64)) * 0.1
    x1 -= x1.mean(axis=1, keepdims=True)
    x2 -= x2.mean(axis=1, keepdims=True)
    assert np.abs(1 - ssim(x1, x2) - ssim_distance(x1, x2)).max() <= 1e-12
    assert np.all(ssim_distance(x1, x2) >= 0)
    assert np.all(ssim_distance(x1, x1) == 0)


def test_distance_preconditions():
    with pytest.raises(NotCentered):
        ssim_distance(np.array([1.0, 0.0]), np.array([0.0, 0.0]))
    with pytest.raises(LengthMismatch):
        ssim(np.zeros(3), np.zeros(4))
    with pytest.raises(LengthMismatch):
        ssim_distance(np.zeros(3), np.zeros(4))


vecs = arrays(np.float64, 8, elements=st.floats(-1, 1))


@settings(max_examples=200, deadline=None)
@given(vecs, vecs)
def test_symmetry_and_bound(a, b):
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert ssim(a, b) <= 1 + 1e-12
    a = a - a.mean()
    b = b - b.mean()
    assert ssim_distance(a, b) == pytest.approx(ssim_distance(b, a), abs=1e-12)


def test_mse_units():
    assert mse(np.zeros((4, 4)), np.zeros((4, 4))) == 0
    assert mse(np.zeros((4, 4)), np.full((4, 4), 1 / 255)) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(DimensionError):
        mse(np.zeros((4, 4)), np.zeros((4, 8)))


def test_mean_block_ssim_identity(rng):
    img = rng.random((16, 16))
    assert mean_block_ssim(img, img) == pytest.approx(1.0)
    assert mean_block_ssim(img, np.clip(img + 0.3 * rng.standard_normal(img.shape), 0, 1)) < 0.9
    assert DEFAULT_CONSTS.l == 1.0
