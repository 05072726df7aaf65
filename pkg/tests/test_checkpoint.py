"""Checkpoint format: byte-exact round trips, integrity, config fit."""

import numpy as np
import pytest

from metaseg.autodiff import ShapeError
from metaseg.checkpoint import (
    CKPT_MAGIC,
    checkpoint_hash,
    load_checkpoint,
    save_checkpoint,
)
from metaseg.data import FormatError, IntegrityError
from metaseg.encoder import EncoderConfig
from metaseg.model import ModelConfig, init_model

CFG = ModelConfig(encoder=EncoderConfig(image_size=16, patch_size=4, embed_dim=8,
                                        n_layers=4, n_heads=2, adapter_hidden=2))
OTHER = ModelConfig(encoder=EncoderConfig(image_size=16, patch_size=4, embed_dim=12,
                                          n_layers=4, n_heads=2, adapter_hidden=2))


@pytest.fixture()
def saved(tmp_path):
    ps = init_model(CFG, 3)
    path = tmp_path / "model.ckpt"
    manifest = save_checkpoint(path, ps, CFG)
    return ps, path, manifest


def test_round_trip_byte_exact(saved):
    ps, path, _ = saved
    back, cfg = load_checkpoint(path)
    assert cfg == CFG
    assert back.byte_hash() == ps.byte_hash()
    assert back.frozen_names() == sorted(ps.frozen_names())


def test_round_trip_preserves_f32(tmp_path):
    cfg32 = ModelConfig(encoder=CFG.encoder, dtype="f32")
    ps = init_model(cfg32, 0)
    assert ps["dec.fuse.w"].data.dtype == np.float32
    path = tmp_path / "m32.ckpt"
    save_checkpoint(path, ps, cfg32)
    back, _ = load_checkpoint(path)
    assert back["dec.fuse.w"].data.dtype == np.float32
    assert back.byte_hash() == ps.byte_hash()


def test_save_is_deterministic(tmp_path):
    ps = init_model(CFG, 3)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, ps, CFG)
    save_checkpoint(b, ps, CFG)
    assert checkpoint_hash(a) == checkpoint_hash(b)


def test_manifest_directory(saved):
    ps, _, manifest = saved
    names = [e["name"] for e in manifest["tensors"]]
    assert names == sorted(ps.names())
    ent = next(e for e in manifest["tensors"] if e["name"] == "enc.patch.w")
    assert ent["frozen"] is True
    assert ent["shape"] == list(ps["enc.patch.w"].data.shape)
    offsets = [e["offset"] for e in manifest["tensors"]]
    assert offsets == sorted(offsets)


def test_bad_magic(tmp_path, saved):
    _, path, _ = saved
    raw = bytearray(path.read_bytes())
    raw[:8] = b"NOTMAGIC"
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(bad)


def test_bit_flip_names_tensor(tmp_path, saved):
    _, path, manifest = saved
    raw = bytearray(path.read_bytes())
    head_len = int.from_bytes(raw[8:16], "little")
    first = manifest["tensors"][0]
    raw[16 + head_len + first["offset"]] ^= 0x40
    bad = tmp_path / "flip.ckpt"
    bad.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError, match=first["name"]):
        load_checkpoint(bad)


def test_truncated_blob(tmp_path, saved):
    _, path, _ = saved
    raw = path.read_bytes()
    bad = tmp_path / "trunc.ckpt"
    bad.write_bytes(raw[:-100])
    with pytest.raises(FormatError, match="runs past end"):
        load_checkpoint(bad)


def test_version_skew(tmp_path, saved):
    _, path, _ = saved
    raw = path.read_bytes()
    head_len = int.from_bytes(raw[8:16], "little")
    head = raw[16:16 + head_len].replace(b'"version":1', b'"version":9')
    bad = tmp_path / "v9.ckpt"
    bad.write_bytes(CKPT_MAGIC + len(head).to_bytes(8, "little") + head
                    + raw[16 + head_len:])
    with pytest.raises(FormatError, match="migration"):
        load_checkpoint(bad)


def test_mismatched_config_names_offender(saved):
    _, path, _ = saved
    with pytest.raises(ShapeError, match=r"tensor '[\w.]+' has shape"):
        load_checkpoint(path, expect=OTHER)


def test_matching_expect_passes(saved):
    _, path, _ = saved
    ps, cfg = load_checkpoint(path, expect=CFG)
    assert cfg == CFG
    assert ps.n_scalars() > 0
