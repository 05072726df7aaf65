"""Model assembly: encoder -> prompt injection -> mask-gated decoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParameterError, Tensor
from .decoder import DecoderConfig, decode, init_decoder, predict_mask
from .encoder import EncoderConfig, encode, init_encoder
from .params import ParamSet
from .prompt import PointPrompt, PromptConfig, init_prompt, self_sample
from .seeding import derive_rng

PROMPT_MODES = ("visual", "positional", "none")
DECODER_MODES = ("gated", "plain")
_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    prompt_mode: str = "visual"
    decoder_mode: str = "gated"
    dtype: str = "f64"

    def __post_init__(self):
        if self.prompt_mode not in PROMPT_MODES:
            raise ParameterError(f"prompt_mode must be one of {PROMPT_MODES}")
        if self.decoder_mode not in DECODER_MODES:
            raise ParameterError(f"decoder_mode must be one of {DECODER_MODES}")
        if self.dtype not in _DTYPES:
            raise ParameterError("dtype must be 'f32' or 'f64'")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]


def init_model(cfg: ModelConfig, seed: int) -> ParamSet:
    ps = ParamSet()
    dt = cfg.np_dtype
    init_encoder(ps, cfg.encoder, derive_rng(seed, "init", "encoder"), dtype=dt)
    if cfg.prompt_mode != "none":
        init_prompt(
            ps,
            cfg.prompt,
            cfg.encoder.embed_dim,
            derive_rng(seed, "init", "prompt"),
            dtype=dt,
            mode=cfg.prompt_mode,
        )
    init_decoder(ps, cfg.encoder.embed_dim, derive_rng(seed, "init", "decoder"), dtype=dt)
    return ps


def forward(
    ps: ParamSet,
    cfg: ModelConfig,
    image: np.ndarray,
    prompt: PointPrompt | None,
    support_mask: np.ndarray | None,
) -> Tensor:
    """Full forward pass to (H, W) logits.

    The prompt, when present, is folded into the deepest feature map; the
    earlier snapshots act as skip features.  A missing support mask in gated
    mode falls back to a neutral all-active gate.
    """
    image = np.asarray(image, dtype=cfg.np_dtype)
    levels = encode(ps, cfg.encoder, image)
    if cfg.prompt_mode != "none" and prompt is not None:
        levels = levels[:-1] + [
            self_sample(ps, cfg.prompt, prompt, levels[-1], mode=cfg.prompt_mode)
        ]
    return decode(
        levels,
        support_mask,
        ps,
        cfg.decoder,
        (cfg.encoder.image_size, cfg.encoder.image_size),
        gated=cfg.decoder_mode == "gated",
    )


def predict(
    ps: ParamSet,
    cfg: ModelConfig,
    image: np.ndarray,
    prompt: PointPrompt | None,
    support_mask: np.ndarray | None,
) -> np.ndarray:
    return predict_mask(forward(ps, cfg, image, prompt, support_mask))
