import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isca.blocks import partition
from isca.errors import EmptyDataset, RankDeficient
from isca.kernel import KernelConfig, process_kernel, raw_block_stack
from isca.pca import fit_kernel_pca, fit_pca, project_kernel_pca, project_pca, reconstruct_pca, top_eigh


def _img2(v):
    """A 2x2 image (one q=4 block) from a 4-vector."""
    return np.asarray(v, dtype=np.float64).reshape(2, 2)


def test_line_data_principal_direction(rng):
    direction = np.array([1.0, 2.0, -1.0, 0.5])
    direction /= np.linalg.norm(direction)
    t = rng.standard_normal(9)
    t -= t.mean()
    imgs = [_img2(0.5 + 0.1 * ti * direction) for ti in t]
    m = fit_pca(imgs, p=1, block_side=2)
    u = m.bases[0, :, 0]
    assert abs(abs(u @ direction) - 1) <= 1e-10
    X = raw_block_stack(imgs, 2)[0]
    total = ((X - X.mean(axis=0)) ** 2).sum()
    assert m.eigenvalues[0, 0] == pytest.approx(total, rel=1e-10)


def test_isotropic_eigenvalue_spread():
    g = np.random.default_rng(0)
    imgs = [_img2(0.5 + 0.05 * g.standard_normal(4)) for _ in range(20000)]
    m = fit_pca(imgs, p=4, block_side=2)
    lam = m.eigenvalues[0]
    assert (lam.max() - lam.min()) / lam.mean() < 0.1


def test_three_points_match_dense_oracle(rng):
    pts = rng.random((3, 4))
    m = fit_pca([_img2(p) for p in pts], p=2, block_side=2)
    Xc = pts - pts.mean(axis=0)
    S = Xc.T @ Xc
    lam, vec = np.linalg.eig(S)
    order = np.argsort(-lam.real)
    lam, vec = lam.real[order], vec.real[:, order]
    np.testing.assert_allclose(m.eigenvalues[0], lam[:2], atol=1e-10)
    for k in range(2):
        v = vec[:, k] / np.linalg.norm(vec[:, k])
        assert abs(abs(v @ m.bases[0, :, k]) - 1) <= 1e-10


def test_pca_invariants(tiny_images):
    m = fit_pca(tiny_images, p=4)
    gram = np.swapaxes(m.bases, -1, -2) @ m.bases
    assert np.abs(gram - np.eye(4)).max() <= 1e-10
    assert np.all(np.diff(m.eigenvalues, axis=1) <= 0)
    X = raw_block_stack(tiny_images, 8)
    Xc = X - X.mean(axis=1, keepdims=True)
    S = np.swapaxes(Xc, -1, -2) @ Xc
    for i in range(m.b):
        for k in range(4):
            u = m.bases[i, :, k]
            assert np.linalg.norm(S[i] @ u - m.eigenvalues[i, k] * u) <= 1e-8 * np.linalg.norm(u) * max(1.0, m.eigenvalues[i, 0])


def test_reconstruction_error_nonincreasing_in_p(tiny_images):
    X = raw_block_stack(tiny_images, 8)
    Xc = X - X.mean(axis=1, keepdims=True)
    errs = []
    for p in range(1, 10):
        m = fit_pca(tiny_images, p=p)
        R = Xc - Xc @ m.bases @ np.swapaxes(m.bases, -1, -2)
        errs.append(float((R**2).sum()))
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_pca_requires_two_images(tiny_images):
    with pytest.raises(EmptyDataset):
        fit_pca(tiny_images[:1])
    with pytest.raises(EmptyDataset):
        fit_kernel_pca(tiny_images[:1])


def test_reconstruct_pca_full_rank_is_identity(tiny_images):
    m = fit_pca(tiny_images, p=64)
    out = reconstruct_pca(m, partition(tiny_images[3], 8))
    np.testing.assert_allclose(out, tiny_images[3], atol=1e-10)


def _pairwise(P):
    return np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)


def test_linear_kernel_pca_matches_pca(tiny_images):
    p = 4
    lin = fit_kernel_pca(tiny_images, p, KernelConfig("linear", normalize=False))
    plain = fit_pca(tiny_images, p)
    for im in tiny_images[:1]:
        bs = partition(im, 8)
        assert project_kernel_pca(lin, bs).shape == project_pca(plain, bs).shape
    A = np.stack([project_kernel_pca(lin, partition(im, 8)) for im in tiny_images], axis=1)
    B = np.stack([project_pca(plain, partition(im, 8)) for im in tiny_images], axis=1)
    for i in range(A.shape[0]):
        assert np.abs(_pairwise(A[i]) - _pairwise(B[i])).max() <= 1e-6
    np.testing.assert_allclose(lin.eigenvalues, plain.eigenvalues, rtol=1e-8)


def test_identity_kernel_has_unit_eigenvalues():
    lam, _ = top_eigh(np.eye(5)[None], 3)
    np.testing.assert_allclose(lam, 1.0, atol=1e-15)


def test_training_projection_is_scaled_eigenvector(tiny_images):
    kcfg = KernelConfig("rbf")
    m = fit_kernel_pca(tiny_images, 3, kcfg)
    pk = process_kernel(raw_block_stack(tiny_images, 8), kcfg.resolved(64))
    lam, alpha = top_eigh(pk.K, 3)
    for j, im in enumerate(tiny_images):
        got = project_kernel_pca(m, partition(im, 8))
        want = np.sqrt(lam) * alpha[:, j, :]
        assert np.abs(got - want).max() <= 1e-8


def test_kernel_pca_coefficients_whitened(tiny_images):
    kcfg = KernelConfig("rbf")
    m = fit_kernel_pca(tiny_images, 3, kcfg)
    K = process_kernel(raw_block_stack(tiny_images, 8), m.kernel).K
    gram = np.swapaxes(m.coef, -1, -2) @ K @ m.coef
    assert np.abs(gram - np.eye(3)).max() <= 1e-8


def test_kernel_pca_rank_deficient(tiny_images):
    # n images give a centered kernel of rank at most n-1
    with pytest.raises(RankDeficient):
        fit_kernel_pca(tiny_images[:3], 3, KernelConfig("rbf"))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_pca_reconstruction_optimal_over_random_bases(n, seed):
    g = np.random.default_rng(seed)
    imgs = [_img2(g.random(4)) for _ in range(n)]
    m = fit_pca(imgs, p=1, block_side=2)
    X = raw_block_stack(imgs, 2)[0]
    Xc = X - X.mean(axis=0)
    best = ((Xc - Xc @ m.bases[0] @ m.bases[0].T) ** 2).sum()
    u = g.standard_normal((4, 1))
    u /= np.linalg.norm(u)
    assert best <= ((Xc - Xc @ u @ u.T) ** 2).sum() + 1e-12
