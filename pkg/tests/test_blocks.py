import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from isca.blocks import (
    BlockSet,
    load_image,
    partition,
    reassemble,
    save_image,
    stack_blocks,
    synthetic_image,
    to_uint8,
)
from isca.errors import DimensionError, FormatError


def test_partition_512_gives_4096_blocks_of_64():
    bs = partition(np.zeros((512, 512)), 8)
    assert bs.blocks.shape == (4096, 64)
    assert bs.grid == (64, 64) and bs.source_dims == (512, 512)


def test_constant_image_blocks_are_zero():
    bs = partition(np.full((16, 24), 0.5), 8)
    assert np.all(bs.blocks == 0)
    assert np.all(bs.means == 0.5)


def test_ramp_round_trip_and_order():
    img = np.arange(256, dtype=float).reshape(16, 16) / 255
    bs = partition(img, 8)
    assert bs.n_blocks == 4
    # row-major block traversal and row-major reshape inside each tile
    np.testing.assert_allclose(bs.raw_blocks()[1], img[0:8, 8:16].ravel(), atol=1e-15)
    np.testing.assert_allclose(bs.raw_blocks()[2], img[8:16, 0:8].ravel(), atol=1e-15)
    assert np.abs(reassemble(bs) - img).max() <= 1e-12


def test_zero_blocks_with_half_means_reassemble_to_gray():
    bs = BlockSet(np.zeros((4, 16)), np.full(4, 0.5), 4, (2, 2), (8, 8))
    np.testing.assert_array_equal(reassemble(bs), np.full((8, 8), 0.5))


def test_reassemble_clamps():
    bs = BlockSet(np.array([[0.6, -0.6, 0.6, -0.6]]), np.array([0.5]), 2, (1, 1), (2, 2))
    out = reassemble(bs)
    assert out.max() == 1.0 and out.min() == 0.0


def test_indivisible_rejected():
    with pytest.raises(DimensionError):
        partition(np.zeros((20, 16)), 8)
    with pytest.raises(DimensionError):
        partition(np.zeros((8, 8)), 1)


def test_out_of_range_image_rejected():
    with pytest.raises(ValueError):
        partition(np.full((8, 8), 1.5), 8)


def test_stack_blocks_rejects_mixed_sizes():
    with pytest.raises(DimensionError):
        stack_blocks([np.zeros((8, 8)), np.zeros((16, 8))], 8)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 4).flatmap(
        lambda r: st.integers(1, 4).flatmap(
            lambda c: arrays(np.float64, (4 * r, 4 * c), elements=st.floats(0, 1))
        )
    )
)
def test_round_trip_and_centering_property(img):
    bs = partition(img, 4)
    assert np.abs(bs.blocks.mean(axis=1)).max() <= 1e-12
    assert bs.n_blocks * bs.q == img.size
    assert np.abs(reassemble(bs, clamp=False) - img).max() <= 1e-12


def test_pgm_8bit_endpoints_and_linear_map(tmp_path):
    raw = np.array([[0, 128], [255, 7]], dtype=np.uint8)
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n# comment\n2 2\n255\n" + raw.tobytes())
    img = load_image(p)
    assert img[0, 0] == 0.0 and img[1, 0] == 1.0
    assert img[0, 1] == 128 / 255


def test_pgm_8bit_byte_identical_round_trip(tmp_path):
    img = synthetic_image(32)
    a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
    save_image(img, a)
    save_image(load_image(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_pgm_16bit_round_trip(tmp_path):
    img = np.linspace(0, 1, 64).reshape(8, 8)
    p = tmp_path / "w.pgm"
    save_image(img, p, bits=16)
    np.testing.assert_allclose(load_image(p), img, atol=0.5 / 65535)


def test_ascii_pgm(tmp_path):
    p = tmp_path / "t.pgm"
    p.write_text("P2\n2 1\n15\n0 15\n")
    np.testing.assert_array_equal(load_image(p), [[0.0, 1.0]])


def test_bad_files(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(FormatError):
        load_image(p)
    q = tmp_path / "junk.bin"
    q.write_bytes(b"not an image at all")
    with pytest.raises(FormatError):
        load_image(q)
    with pytest.raises(OSError):
        load_image(tmp_path / "missing.pgm")


def test_png_color_uses_rec601_luma(tmp_path):
    Image = pytest.importorskip("PIL.Image")
    rgb = np.zeros((2, 2, 3), dtype=np.uint8)
    rgb[0, 0] = (255, 0, 0)
    rgb[0, 1] = (0, 255, 0)
    rgb[1, 0] = (0, 0, 255)
    rgb[1, 1] = (255, 255, 255)
    p = tmp_path / "c.png"
    Image.fromarray(rgb).save(p)
    np.testing.assert_allclose(load_image(p), [[0.299, 0.587], [0.114, 1.0]], atol=1e-12)


def test_synthetic_image_is_deterministic_and_8bit():
    a, b = synthetic_image(64), synthetic_image(64)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(to_uint8(a) / 255.0, a)
    assert 0.0 < a.min() and a.max() < 1.0
