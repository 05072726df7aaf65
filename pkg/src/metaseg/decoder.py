"""Mask-gated multi-level decoder.

Each encoder snapshot passes through an attention block whose keys and values
are gated by a soft support mask: K = (M' .* F) Wk, V = M' Wv, with column-
normalized attention over l2-normalized queries/keys at low temperature.  The
attended values multiply back onto the features (multiply & norm) so support
context modulates rather than replaces the query features.  Per level the
result goes through a 3x3 conv and is upsampled to image resolution; the four
levels concatenate into a fusion conv that emits one logit per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as _sps

from . import autodiff as ad
from .autodiff import ParameterError, ShapeError, Tensor
from .encoder import map_to_tokens, tokens_to_map, trunc_normal
from .params import ParamSet

N_LEVELS = 4


@dataclass(frozen=True)
class DecoderConfig:
    tau: float = 0.1
    blur_sigma: float = 2.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if not self.blur_sigma > 0:
            raise ParameterError(f"blur_sigma must be positive, got {self.blur_sigma}")


def init_decoder(
    ps: ParamSet, embed_dim: int, rng: np.random.Generator, dtype=np.float64
) -> None:
    c = embed_dim
    tn = lambda *s: trunc_normal(rng, s, dtype=dtype)
    for lvl in range(N_LEVELS):
        pre = f"dec.level{lvl}."
        for w in ("wq", "wk", "wv"):
            ps.add(pre + "attn." + w, tn(c, c))
        ps.add(pre + "norm.g", np.ones(c, dtype=dtype))
        ps.add(pre + "norm.b", np.zeros(c, dtype=dtype))
        ps.add(pre + "conv.w", tn(c, c, 3, 3))
        ps.add(pre + "conv.b", np.zeros(c, dtype=dtype))
    ps.add("dec.fuse.w", tn(1, N_LEVELS * c, 3, 3))
    ps.add("dec.fuse.b", np.zeros(1, dtype=dtype))


def prepare_support_mask(
    mask: np.ndarray, grid: int, channels: int, sigma: float, dtype=np.float64
) -> Tensor:
    """Binary (H, W) support mask -> constant soft (n_tokens, channels) gate.

    Area-average down to the token grid, Gaussian-blur so near-boundary
    tokens keep partial weight, then tile across channels.
    """
    mask = np.asarray(mask)
    vals = np.unique(mask)
    if not np.all(np.isin(vals, (0, 1))):
        raise ParameterError(f"support mask must be binary, got values {vals[:5]}")
    h, w = mask.shape
    if h % grid or w % grid:
        raise ShapeError(f"mask {mask.shape} not divisible by token grid {grid}")
    fh, fw = h // grid, w // grid
    down = mask.astype(dtype).reshape(grid, fh, grid, fw).mean(axis=(1, 3))
    soft = ad.gaussian_blur(Tensor(down), sigma).data
    soft = np.clip(soft, 0.0, 1.0)
    return Tensor(np.repeat(soft.reshape(grid * grid, 1), channels, axis=1))


def mask_attention(
    f: Tensor, gate: Tensor, ps: ParamSet, level: int, tau: float
) -> Tensor:
    """One gated block on (n, c) tokens; returns (n, c)."""
    pre = f"dec.level{level}."
    k = ad.matmul(ad.mul(gate, f), ps[pre + "attn.wk"])
    ad.assert_finite(k, f"level {level} key projection")
    q = ad.matmul(f, ps[pre + "attn.wq"])
    att = ad.softmax_col(
        ad.matmul(ad.l2_normalize_rows(q), ad.transpose(ad.l2_normalize_rows(k))), tau
    )
    ad.assert_finite(att, f"level {level} attention weights")
    v = ad.matmul(gate, ps[pre + "attn.wv"])
    out = ad.instance_norm(
        ad.mul(ad.matmul(att, v), f), ps[pre + "norm.g"], ps[pre + "norm.b"]
    )
    ad.assert_finite(out, f"level {level} gated output")
    return out


def decode(
    levels: list[Tensor],
    support_mask: np.ndarray | None,
    ps: ParamSet,
    cfg: DecoderConfig,
    out_hw: tuple[int, int],
    gated: bool = True,
) -> Tensor:
    """Fuse 4 feature maps (d, g, g) into (H, W) logits."""
    if len(levels) != N_LEVELS:
        raise ShapeError(f"decoder expects {N_LEVELS} levels, got {len(levels)}")
    ups = []
    for lvl, z in enumerate(levels):
        d, g, _ = z.shape
        x = map_to_tokens(z)
        if gated:
            if support_mask is None:
                # no support context: neutral gate keeps every token active
                gate = Tensor(np.ones((g * g, d), dtype=z.data.dtype))
            else:
                gate = prepare_support_mask(
                    support_mask, g, d, cfg.blur_sigma, dtype=z.data.dtype
                )
            x = mask_attention(x, gate, ps, lvl, cfg.tau)
        y = tokens_to_map(x, g)
        y = ad.gelu(ad.conv3x3(y, ps[f"dec.level{lvl}.conv.w"], ps[f"dec.level{lvl}.conv.b"]))
        ups.append(ad.upsample(y, out_hw, "bilinear"))
    fused = ad.concat(ups, axis=0)
    logits = ad.conv3x3(fused, ps["dec.fuse.w"], ps["dec.fuse.b"])
    return ad.reshape(logits, out_hw)


def predict_mask(logits, threshold: float = 0.5) -> np.ndarray:
    """Logits -> uint8 mask; probability ties at the threshold go foreground."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return (_sps.expit(arr) >= threshold).astype(np.uint8)
