"""Patch-token transformer encoder with a frozen base and trainable adapters.

The base (patch projection, positional table, attention, MLPs, norms) is
initialized once and never updated.  Each layer carries a small bottleneck
adapter: down-project the layer input, GELU, then a single up-projection
shared across layers.  The up-projection starts at zero, so a fresh encoder
is exactly the frozen base.  Four snapshots, one after each quarter of the
layer stack, feed the decoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterError, Tensor
from .params import ParamSet


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 32
    n_layers: int = 4
    n_heads: int = 4
    adapter_hidden: int = 8

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ParameterError(
                f"image_size {self.image_size} not divisible by patch {self.patch_size}"
            )
        if self.n_layers < 4 or self.n_layers % 4 != 0:
            raise ParameterError("n_layers must be a positive multiple of 4")
        if self.embed_dim % self.n_heads != 0:
            raise ParameterError("embed_dim must be divisible by n_heads")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_tokens(self) -> int:
        return self.grid * self.grid


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float64):
    x = rng.normal(0.0, std, size=shape)
    return np.clip(x, -2.0 * std, 2.0 * std).astype(dtype)


def init_encoder(ps: ParamSet, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float64) -> None:
    d, p = cfg.embed_dim, cfg.patch_size
    hid = cfg.adapter_hidden
    z = lambda *s: np.zeros(s, dtype=dtype)
    one = lambda *s: np.ones(s, dtype=dtype)
    tn = lambda *s: trunc_normal(rng, s, dtype=dtype)

    ps.add("enc.patch.w", tn(p * p, d), frozen=True)
    ps.add("enc.patch.pos", tn(cfg.n_tokens, d), frozen=True)
    for k in range(cfg.n_layers):
        pre = f"enc.layer{k}."
        ps.add(pre + "ln1.g", one(d), frozen=True)
        ps.add(pre + "ln1.b", z(d), frozen=True)
        for w in ("wq", "wk", "wv", "wo"):
            ps.add(pre + "attn." + w, tn(d, d), frozen=True)
        ps.add(pre + "ln2.g", one(d), frozen=True)
        ps.add(pre + "ln2.b", z(d), frozen=True)
        ps.add(pre + "mlp.w1", tn(d, 4 * d), frozen=True)
        ps.add(pre + "mlp.b1", z(4 * d), frozen=True)
        ps.add(pre + "mlp.w2", tn(4 * d, d), frozen=True)
        ps.add(pre + "mlp.b2", z(d), frozen=True)
        ps.add(pre + "adapter.tune", tn(d, hid))
    # shared up-projection, zero so adapters start as a no-op
    ps.add("enc.adapter.up", z(hid, d))


def patchify(image: np.ndarray, patch: int, dtype) -> np.ndarray:
    """(H, W) image -> (n_tokens, patch*patch) rows in raster order."""
    h = image.shape[0] // patch
    w = image.shape[1] // patch
    x = image.reshape(h, patch, w, patch).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(x.reshape(h * w, patch * patch), dtype=dtype)


def tokens_to_map(x: Tensor, grid: int) -> Tensor:
    """(n, d) raster tokens -> (d, grid, grid) feature map."""
    d = x.shape[1]
    return ad.reshape(ad.transpose(x), (d, grid, grid))


def map_to_tokens(z: Tensor) -> Tensor:
    """(d, h, w) feature map -> (h*w, d) raster tokens."""
    d, h, w = z.shape
    return ad.transpose(ad.reshape(z, (d, h * w)))


def multihead_self_attention(x: Tensor, ps: ParamSet, pre: str, n_heads: int) -> Tensor:
    d = x.shape[1]
    dh = d // n_heads
    scale = 1.0 / math.sqrt(dh)
    q = ad.matmul(x, ps[pre + "wq"])
    k = ad.matmul(x, ps[pre + "wk"])
    v = ad.matmul(x, ps[pre + "wv"])
    heads = []
    for h in range(n_heads):
        qh = ad.narrow(q, 1, h * dh, (h + 1) * dh)
        kh = ad.narrow(k, 1, h * dh, (h + 1) * dh)
        vh = ad.narrow(v, 1, h * dh, (h + 1) * dh)
        att = ad.softmax_rows(ad.mul(ad.matmul(qh, ad.transpose(kh)), scale))
        heads.append(ad.matmul(att, vh))
    return ad.matmul(ad.concat(heads, axis=1), ps[pre + "wo"])


def adapter_forward(ps: ParamSet, x: Tensor, layer: int) -> Tensor:
    """Bottleneck correction for one layer: up(GELU(tune_k(x)))."""
    down = ad.matmul(x, ps[f"enc.layer{layer}.adapter.tune"])
    return ad.matmul(ad.gelu(down), ps["enc.adapter.up"])


def encode(ps: ParamSet, cfg: EncoderConfig, image: np.ndarray) -> list[Tensor]:
    """Run the adapted transformer; return 4 feature maps of shape (d, g, g)."""
    if image.shape != (cfg.image_size, cfg.image_size):
        raise ad.ShapeError(
            f"image {image.shape} != ({cfg.image_size}, {cfg.image_size})"
        )
    dtype = ps["enc.patch.w"].data.dtype
    x = ad.add(
        ad.matmul(Tensor(patchify(image, cfg.patch_size, dtype)), ps["enc.patch.w"]),
        ps["enc.patch.pos"],
    )
    snaps: list[Tensor] = []
    per_block = cfg.n_layers // 4
    for k in range(cfg.n_layers):
        pre = f"enc.layer{k}."
        x_in = x
        h1 = ad.layer_norm(x, ps[pre + "ln1.g"], ps[pre + "ln1.b"])
        x = ad.add(x, multihead_self_attention(h1, ps, pre + "attn.", cfg.n_heads))
        h2 = ad.layer_norm(x, ps[pre + "ln2.g"], ps[pre + "ln2.b"])
        mlp = ad.matmul(
            ad.gelu(ad.add(ad.matmul(h2, ps[pre + "mlp.w1"]), ps[pre + "mlp.b1"])),
            ps[pre + "mlp.w2"],
        )
        mlp = ad.add(mlp, ps[pre + "mlp.b2"])
        # adapter reads the layer input and joins after the MLP sub-layer
        x = ad.add(ad.add(x, mlp), adapter_forward(ps, x_in, k))
        if (k + 1) % per_block == 0:
            snaps.append(tokens_to_map(x, cfg.grid))
    return snaps
