import hashlib
import json
import struct

import numpy as np
import pytest

from isca import distortions as D
from isca.admm import TrainConfig
from isca.blocks import partition
from isca.errors import ChecksumMismatch, FormatError, InvariantViolation, UnsupportedVersion
from isca.model_io import load_dataset, load_model, read_manifest, save_dataset, save_model
from isca.pipeline import MethodSpec, fit_method, kernel_config, project


def _fit(kind, images):
    cfg = TrainConfig(p=3, max_epochs=3, rho=0.1 if kind.startswith("kisca") else 1.0)
    if kind == "isca":
        return fit_method(MethodSpec("isca"), images, cfg=cfg)
    if kind == "kisca":
        return fit_method(MethodSpec("kisca", "rbf"), images, cfg=cfg)
    if kind == "kisca-sigmoid":
        return fit_method(MethodSpec("kisca", "sigmoid"), images, cfg=cfg, kcfg=kernel_config("sigmoid", sigmoid_scale=0.2))
    if kind == "pca":
        return fit_method(MethodSpec("pca"), images, p=3)
    return fit_method(MethodSpec("kpca", "rbf"), images, p=3)


def _rewrite(path, edit_manifest=None, edit_payload=None):
    """Rewrite a model file, optionally editing it, with a fresh valid checksum."""
    manifest, payload = read_manifest(path)
    if edit_payload is not None:
        payload = edit_payload(manifest, bytearray(payload))
    manifest["checksum"]["value"] = hashlib.sha256(payload).hexdigest()
    if edit_manifest is not None:
        edit_manifest(manifest)
    head = json.dumps(manifest).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(head)) + head + bytes(payload))


@pytest.mark.parametrize("kind", ["isca", "kisca", "kisca-sigmoid", "pca", "kpca"])
def test_round_trip_bit_exact(kind, tiny_images, tmp_path):
    m = _fit(kind, tiny_images)
    path = tmp_path / "m.iscm"
    save_model(m, path)
    r = load_model(path)
    assert r.kind == m.kind
    assert (r.block_side, tuple(r.grid)) == (m.block_side, tuple(m.grid))
    for name in ("bases", "theta", "delta", "coef", "eigenvalues", "means"):
        if hasattr(m, name):
            a, b = getattr(m, name), getattr(r, name)
            assert a.shape == b.shape and a.tobytes() == b.tobytes(), name
    if hasattr(m, "stats"):
        assert m.stats.train_blocks.tobytes() == r.stats.train_blocks.tobytes()
        assert r.kernel == m.kernel
    if hasattr(m, "convergence_log"):
        assert r.convergence_log == m.convergence_log
        assert r.config == m.config
    for im in tiny_images[:3]:
        bs = partition(im, 8)
        assert project(m, bs).tobytes() == project(r, bs).tobytes()


def test_manifest_contents(tiny_images, tmp_path):
    m = _fit("kisca", tiny_images)
    save_model(m, tmp_path / "k.iscm")
    man, _ = read_manifest(tmp_path / "k.iscm")
    assert man["model_kind"] == "kernel_isca"
    assert man["dims"] == {"q": 64, "p": 3, "b": 4, "n": 10}
    assert man["seed"] == 0
    assert man["checksum"]["algorithm"] == "sha256"
    assert man["hyperparameters"]["kernel"]["kind"] == "rbf"


def test_payload_is_column_major(tiny_images, tmp_path):
    m = _fit("isca", tiny_images)
    save_model(m, tmp_path / "m.iscm")
    man, payload = read_manifest(tmp_path / "m.iscm")
    entry = next(e for e in man["arrays"] if e["name"] == "bases")
    first = np.frombuffer(payload[entry["offset"] : entry["offset"] + 64 * 3 * 8], dtype="<f8")
    np.testing.assert_array_equal(first, m.bases[0].T.ravel())


def test_corrupted_byte_detected(tiny_images, tmp_path):
    path = tmp_path / "m.iscm"
    save_model(_fit("pca", tiny_images), path)
    raw = bytearray(path.read_bytes())
    raw[-5] ^= 0x10
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumMismatch):
        load_model(path)


def test_non_orthonormal_bases_rejected(tiny_images, tmp_path):
    path = tmp_path / "m.iscm"
    save_model(_fit("isca", tiny_images), path)

    def bump(manifest, payload):
        entry = next(e for e in manifest["arrays"] if e["name"] == "bases")
        off = entry["offset"]
        (v,) = struct.unpack_from("<d", payload, off)
        struct.pack_into("<d", payload, off, v + 0.01)
        return payload

    _rewrite(path, edit_payload=bump)
    with pytest.raises(InvariantViolation) as info:
        load_model(path)
    assert info.value.deviation > 1e-3
    assert "deviation" in str(info.value)
    assert load_model(path, validate=False).kind == "isca"


def test_kernel_gram_mismatch_rejected(tiny_images, tmp_path):
    path = tmp_path / "k.iscm"
    save_model(_fit("kisca", tiny_images), path)

    def bump(manifest, payload):
        entry = next(e for e in manifest["arrays"] if e["name"] == "delta")
        struct.pack_into("<d", payload, entry["offset"], 5.0)
        return payload

    _rewrite(path, edit_payload=bump)
    with pytest.raises(InvariantViolation):
        load_model(path)


def test_version_gate(tiny_images, tmp_path):
    path = tmp_path / "m.iscm"
    save_model(_fit("pca", tiny_images), path)
    _rewrite(path, edit_manifest=lambda m: m.update(format_version=99))
    with pytest.raises(UnsupportedVersion):
        load_model(path)


def test_garbage_file(tmp_path):
    (tmp_path / "x.iscm").write_bytes(b"\x05\x00\x00\x00hello")
    with pytest.raises(FormatError):
        load_model(tmp_path / "x.iscm")
    (tmp_path / "y.iscm").write_bytes(b"\x01")
    with pytest.raises(FormatError):
        load_model(tmp_path / "y.iscm")
    with pytest.raises(OSError):
        load_model(tmp_path / "missing.iscm")


def test_dataset_round_trip(desk_test, tmp_path):
    save_dataset(desk_test, tmp_path / "ds", {"source": "synthetic"})
    items, meta = load_dataset(tmp_path / "ds")
    assert meta["source"] == "synthetic"
    assert len(items) == 12
    for a, b in zip(desk_test, items):
        # images are already on the 16-bit grid, so PGM storage is lossless
        np.testing.assert_array_equal(a.image, b.image)
        assert (a.label, a.family, a.letters, a.seed) == (b.label, b.family, b.letters, b.seed)
        assert b.realized_mse == a.realized_mse
    doc = json.loads((tmp_path / "ds" / "manifest.json").read_text())
    assert set(doc["images"][0]) >= {"file", "label", "family", "target_mse", "realized_mse", "seed"}
    assert doc["images"][6]["file"] == desk_test[6].filename
    assert D.LABELS[doc["images"][6]["family"].split("+")[0]] == doc["images"][6]["label"]
