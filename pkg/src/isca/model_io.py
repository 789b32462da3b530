"""Binary model files and dataset manifests.

A model file (``.iscm``) is::

    u32 little-endian  manifest length L
    L bytes            UTF-8 JSON manifest
    payload            float64 little-endian arrays, back to back

Each array is described in ``manifest["arrays"]`` by name, shape, byte
offset into the payload, and byte length. Stacked matrices ``(b, r, c)`` are
written block by block, each matrix column-major; stacked vectors ``(b, k)``
are written block by block. ``manifest["checksum"]`` is the SHA-256 of the
payload bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from .admm import IscaModel, TrainConfig, orthonormality_residual
from .blocks import load_image, save_image
from .distortions import LabeledImage
from .errors import ChecksumMismatch, FormatError, InvariantViolation, UnsupportedVersion
from .kernel import KernelConfig, KernelIscaModel, KernelStats, process_kernel
from .pca import KernelPcaModel, PcaModel

FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)
ORTHO_TOL = 1e-6
KERNEL_TOL = 1e-8
KERNEL_CONSTRAINT_TOL = 1e-3
DATASET_MANIFEST = "manifest.json"

_LE_F64 = np.dtype("<f8")


def _encode(a: np.ndarray) -> bytes:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3:
        a = np.swapaxes(a, -1, -2)  # column-major within each matrix
    return np.ascontiguousarray(a, dtype=_LE_F64).tobytes()


def _decode(buf: bytes, shape: list[int]) -> np.ndarray:
    shape = tuple(shape)
    if len(shape) == 3:
        b, r, c = shape
        a = np.frombuffer(buf, dtype=_LE_F64).reshape(b, c, r).swapaxes(-1, -2)
    else:
        a = np.frombuffer(buf, dtype=_LE_F64).reshape(shape)
    return np.ascontiguousarray(a, dtype=np.float64)


def _num(x):
    x = float(x)
    return None if math.isnan(x) else x


def _unnum(x):
    return float("nan") if x is None else float(x)


def _arrays(model) -> dict[str, np.ndarray]:
    if model.kind == "isca":
        return {"bases": model.bases}
    if model.kind == "pca":
        return {"bases": model.bases, "eigenvalues": model.eigenvalues, "means": model.means}
    st = model.stats
    stats = {
        "train_blocks": st.train_blocks,
        "raw_diag": st.raw_diag,
        "col_means": st.col_means,
        "grand_mean": st.grand_mean,
    }
    if model.kind == "kernel_isca":
        return {"theta": model.theta, "delta": model.delta, **stats}
    return {"coef": model.coef, "eigenvalues": model.eigenvalues, **stats}


def _meta(model) -> tuple[dict, dict, int | None, dict]:
    """dims, hyperparameters, seed, extras."""
    dims = {"q": model.q, "p": model.p, "b": model.b, "n": getattr(model, "n", None)}
    hyper: dict = {}
    extras: dict = {}
    seed = None
    if model.kind in ("isca", "kernel_isca"):
        hyper["train"] = model.config.to_dict()
        seed = model.config.seed
        extras["convergence_log"] = [_num(v) for v in model.convergence_log]
        extras["initial_error"] = _num(model.initial_error)
    if model.kind in ("kernel_isca", "kernel_pca"):
        hyper["kernel"] = model.kernel.to_dict()
        extras["negative_mass"] = _num(model.negative_mass)
    if model.kind == "kernel_isca":
        extras["admm_constraint_residual"] = _num(model.admm_constraint_residual)
    return dims, hyper, seed, extras


def save_model(model, path) -> None:
    arrays = _arrays(model)
    chunks, layout, offset = [], [], 0
    for name, arr in arrays.items():
        raw = _encode(arr)
        layout.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    dims, hyper, seed, extras = _meta(model)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_kind": model.kind,
        "dims": dims,
        "block_side": model.block_side,
        "grid": list(model.grid),
        "hyperparameters": hyper,
        "seed": seed,
        "checksum": {"algorithm": "sha256", "value": hashlib.sha256(payload).hexdigest()},
        "byte_order": "little",
        "matrix_order": "column-major per block",
        "arrays": layout,
        "extras": extras,
    }
    head = json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(payload)
    os.replace(tmp, path)


def read_manifest(path) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4:
        raise FormatError(f"{path}: file too short for a model header")
    (n,) = struct.unpack("<I", buf[:4])
    try:
        manifest = json.loads(buf[4 : 4 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest: {exc}") from None
    if not isinstance(manifest, dict) or "format_version" not in manifest:
        raise FormatError(f"{path}: manifest lacks format_version")
    return manifest, buf[4 + n :]


def _violation(what: str, dev: float, tol: float):
    err = InvariantViolation(f"{what}: max deviation {dev:.3g} exceeds {tol:g}")
    err.deviation = dev
    return err


def validate_model(model) -> None:
    """Raise :class:`InvariantViolation` if the model breaks its constraints."""
    if model.kind in ("isca", "pca"):
        dev = orthonormality_residual(model.bases)
        if not dev <= ORTHO_TOL:
            raise _violation("bases are not orthonormal", dev, ORTHO_TOL)
        return
    K = process_kernel(model.stats.train_blocks, model.kernel).K
    if model.kind == "kernel_isca":
        dev = float(np.abs(np.swapaxes(model.delta, -1, -2) @ model.delta - K).max())
        if not dev <= KERNEL_TOL:
            raise _violation("Delta^T Delta does not reproduce the training kernel", dev, KERNEL_TOL)
        coef, tol = model.theta, KERNEL_CONSTRAINT_TOL
    else:
        coef, tol = model.coef, ORTHO_TOL
    gram = np.swapaxes(coef, -1, -2) @ K @ coef
    dev = float(np.abs(gram - np.eye(coef.shape[-1])).max())
    if not dev <= tol:
        raise _violation("coefficients violate the kernel constraint", dev, tol)


def load_model(path, validate: bool = True):
    manifest, payload = read_manifest(path)
    version = manifest["format_version"]
    if version not in SUPPORTED_VERSIONS:
        raise UnsupportedVersion(f"{path}: format version {version} (supported: {SUPPORTED_VERSIONS})")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest.get("checksum", {}).get("value"):
        raise ChecksumMismatch(f"{path}: payload checksum {digest[:12]}... does not match manifest")
    arrays = {}
    for entry in manifest["arrays"]:
        start, size = entry["offset"], entry["nbytes"]
        if start + size > len(payload) or size != 8 * math.prod(entry["shape"]):
            raise FormatError(f"{path}: array {entry['name']} lies outside the payload")
        arrays[entry["name"]] = _decode(payload[start : start + size], entry["shape"])
    model = _build(manifest, arrays)
    if validate:
        validate_model(model)
    return model


def _build(m: dict, a: dict):
    kind = m["model_kind"]
    side, grid = int(m["block_side"]), tuple(m["grid"])
    hyper, extras = m.get("hyperparameters", {}), m.get("extras", {})
    cfg = TrainConfig(**hyper["train"]) if "train" in hyper else None
    kcfg = KernelConfig(**hyper["kernel"]) if "kernel" in hyper else None
    log = [_unnum(v) for v in extras.get("convergence_log", [])]
    if kind == "isca":
        return IscaModel(a["bases"], side, grid, cfg, log, _unnum(extras.get("initial_error")))
    if kind == "pca":
        return PcaModel(a["bases"], a["eigenvalues"], a["means"], side, grid)
    stats = KernelStats(a["train_blocks"], a["raw_diag"], a["col_means"], a["grand_mean"])
    if kind == "kernel_isca":
        return KernelIscaModel(
            a["theta"], a["delta"], stats, kcfg, side, grid, cfg, log,
            _unnum(extras.get("initial_error")),
            _unnum(extras.get("admm_constraint_residual")),
            _unnum(extras.get("negative_mass", 0.0)),
        )
    if kind == "kernel_pca":
        return KernelPcaModel(a["coef"], a["eigenvalues"], stats, kcfg, side, grid, _unnum(extras.get("negative_mass", 0.0)))
    raise FormatError(f"unknown model kind {kind!r}")


# -- datasets --------------------------------------------------------------

def save_dataset(items: list[LabeledImage], out_dir, meta: dict | None = None) -> Path:
    """Write images as 16-bit PGM plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for li in items:
        save_image(li.image, out / li.filename, bits=16)
        entries.append(
            {
                "file": li.filename,
                "label": li.label,
                "family": li.family,
                "letters": li.letters,
                "target_mse": li.target_mse,
                "realized_mse": li.realized_mse,
                "seed": li.seed,
            }
        )
    doc = {"format_version": FORMAT_VERSION, **(meta or {}), "images": entries}
    path = out / DATASET_MANIFEST
    tmp = out / f".{DATASET_MANIFEST}.tmp"
    tmp.write_text(json.dumps(doc, indent=1) + "\n")
    os.replace(tmp, path)
    return path


def load_dataset(path) -> tuple[list[LabeledImage], dict]:
    """Read a dataset directory (or its manifest file) back into labeled images."""
    path = Path(path)
    if path.is_dir():
        path = path / DATASET_MANIFEST
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad dataset manifest: {exc}") from None
    if doc.get("format_version") not in SUPPORTED_VERSIONS:
        raise UnsupportedVersion(f"{path}: dataset format version {doc.get('format_version')}")
    items = []
    for e in doc["images"]:
        items.append(
            LabeledImage(
                image=load_image(path.parent / e["file"]),
                label=int(e["label"]),
                family=e["family"],
                target_mse=float(e["target_mse"]),
                realized_mse=float(e["realized_mse"]),
                seed=int(e["seed"]),
                letters=e.get("letters", ""),
            )
        )
    return items, {k: v for k, v in doc.items() if k != "images"}
