"""Checkpoint persistence: manifest + raw tensor blob in one file.

Layout: 8-byte magic, u64 manifest length, manifest JSON (UTF-8), tensor
blob.  The manifest records the format version, a full model-config snapshot,
and a directory of tensors sorted by name with shape, dtype, offset, frozen
flag, and a sha256 of the raw bytes.  Tensors are stored in their native
dtype, little-endian, so a round trip is byte-exact; hashes are verified on
load, tensor by tensor, before anything is returned.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .autodiff import ShapeError
from .config import ModelConfig, from_dict, to_dict
from .data import FormatError, IntegrityError
from .model import init_model
from .params import ParamSet

CKPT_MAGIC = b"MSEGC001"
CKPT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, params: ParamSet, cfg: ModelConfig) -> dict:
    """Write params + config snapshot; returns the manifest that was stored."""
    entries = []
    blob = bytearray()
    for name in sorted(params.names()):
        t = params[name]
        if t.data.dtype.name not in _DTYPES:
            raise FormatError(f"tensor {name!r} has unsupported dtype "
                              f"{t.data.dtype.name}")
        raw = np.ascontiguousarray(t.data.astype(_DTYPES[t.data.dtype.name])).tobytes()
        entries.append({
            "name": name,
            "shape": list(t.data.shape),
            "dtype": t.data.dtype.name,
            "offset": len(blob),
            "nbytes": len(raw),
            "frozen": name in params.frozen_names(),
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
        blob.extend(raw)
    manifest = {
        "version": CKPT_VERSION,
        "config": to_dict(cfg),
        "tensors": entries,
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        fh.write(bytes(blob))
    return manifest


def load_checkpoint(path, expect: ModelConfig | None = None) -> tuple[ParamSet, ModelConfig]:
    """Read a checkpoint back; optionally enforce an expected architecture.

    When ``expect`` is given, every stored tensor's shape must match the
    shape that config would initialize, and the tensor sets must agree.
    """
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {data[:8]!r}")
    if len(data) < 16:
        raise FormatError(f"{path}: truncated checkpoint header")
    head_len = int.from_bytes(data[8:16], "little")
    if len(data) < 16 + head_len:
        raise FormatError(f"{path}: truncated checkpoint manifest")
    try:
        manifest = json.loads(data[16:16 + head_len])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: manifest is not valid JSON ({exc})") from exc
    if manifest.get("version") != CKPT_VERSION:
        raise FormatError(f"{path}: checkpoint version {manifest.get('version')} "
                          f"needs migration to {CKPT_VERSION}")
    cfg = from_dict(ModelConfig, manifest["config"])
    blob = data[16 + head_len:]

    ps = ParamSet()
    for ent in manifest["tensors"]:
        raw = blob[ent["offset"]:ent["offset"] + ent["nbytes"]]
        if len(raw) != ent["nbytes"]:
            raise FormatError(f"{path}: tensor {ent['name']!r} runs past "
                              f"end of blob")
        if hashlib.sha256(raw).hexdigest() != ent["sha256"]:
            raise IntegrityError(f"{path}: tensor {ent['name']!r} bytes do not "
                                 f"match manifest hash")
        arr = np.frombuffer(raw, dtype=_DTYPES[ent["dtype"]]).astype(
            ent["dtype"]).reshape(ent["shape"])
        ps.add(ent["name"], arr, frozen=ent["frozen"])

    if expect is not None:
        want = init_model(expect, 0)
        have_names, want_names = set(ps.names()), set(want.names())
        if have_names != want_names:
            odd = sorted(have_names ^ want_names)[0]
            raise ShapeError(f"checkpoint does not fit config: tensor {odd!r} "
                             f"present in only one of them")
        for name in sorted(want_names):
            if ps[name].data.shape != want[name].data.shape:
                raise ShapeError(
                    f"checkpoint tensor {name!r} has shape "
                    f"{ps[name].data.shape}, config expects "
                    f"{want[name].data.shape}")
    return ps, cfg


def checkpoint_hash(path) -> str:
    """sha256 of the whole file; the determinism probe used by tests."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
