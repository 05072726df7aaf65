"""End-to-end forward assembly: modes, shapes, partition, determinism."""

import numpy as np
import pytest

from metaseg.autodiff import ParameterError
from metaseg.encoder import EncoderConfig
from metaseg.model import ModelConfig, forward, init_model, predict
from metaseg.prompt import PointPrompt

CFG = ModelConfig(
    encoder=EncoderConfig(
        image_size=16, patch_size=4, embed_dim=8, n_layers=4, n_heads=2, adapter_hidden=2
    )
)


def scene(seed=0):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0, 1, (16, 16))
    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[4:10, 5:11] = 1
    return img, mask


def test_forward_shape_and_predict_binary():
    ps = init_model(CFG, 0)
    img, mask = scene()
    out = forward(ps, CFG, img, PointPrompt([(0.5, 0.5)]), mask)
    assert out.shape == (16, 16)
    pred = predict(ps, CFG, img, PointPrompt([(0.5, 0.5)]), mask)
    assert pred.dtype == np.uint8 and set(np.unique(pred)) <= {0, 1}


def test_none_prompt_mode_ignores_clicks():
    cfg = ModelConfig(encoder=CFG.encoder, prompt_mode="none")
    ps = init_model(cfg, 0)
    img, mask = scene()
    a = forward(ps, cfg, img, PointPrompt([(0.2, 0.2)]), mask)
    b = forward(ps, cfg, img, None, mask)
    assert np.array_equal(a.data, b.data)


def test_missing_support_mask_uses_neutral_gate():
    ps = init_model(CFG, 0)
    img, _ = scene()
    out = forward(ps, CFG, img, PointPrompt([(0.5, 0.5)]), None)
    assert np.all(np.isfinite(out.data))


def test_frozen_partition_is_encoder_base_only():
    ps = init_model(CFG, 0)
    assert all(n.startswith("enc.") for n in ps.frozen_names())
    trainable = set(ps.trainable_names())
    assert any(n.startswith("prompt.") for n in trainable)
    assert any(n.startswith("dec.") for n in trainable)
    assert any("adapter" in n for n in trainable)
    assert not any(n.startswith("enc.layer0.attn") for n in trainable)


def test_init_model_deterministic_and_seed_sensitive():
    assert init_model(CFG, 3).byte_hash() == init_model(CFG, 3).byte_hash()
    assert init_model(CFG, 3).byte_hash() != init_model(CFG, 4).byte_hash()


def test_f32_dtype_flag():
    cfg = ModelConfig(encoder=CFG.encoder, dtype="f32")
    ps = init_model(cfg, 0)
    assert ps["dec.fuse.w"].data.dtype == np.float32
    img, mask = scene()
    out = forward(ps, cfg, img, PointPrompt([(0.5, 0.5)]), mask)
    assert out.data.dtype == np.float32


def test_bad_modes_rejected():
    with pytest.raises(ParameterError):
        ModelConfig(prompt_mode="prompts")
    with pytest.raises(ParameterError):
        ModelConfig(decoder_mode="offset")
    with pytest.raises(ParameterError):
        ModelConfig(dtype="f16")
