"""Point prompts: sampling clicks from masks and folding them into features.

``self_sample`` mimics an interactive click pipeline: prompt embeddings are
read out of the feature map at the click locations (visual mode) or from a
Fourier position code (positional mode), tagged with a learned role embedding
per sign, refined together with a bank of global query tokens by one
self-attention block, and finally injected back into the image tokens through
cross-attention where the image tokens are the queries.  The cross-attention
output projection starts at zero, so an untrained block changes nothing.

Points are canonically sorted before any compute, so the output is invariant
to click order down to the last bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .autodiff import ParameterError, Tensor
from .encoder import map_to_tokens, tokens_to_map, trunc_normal
from .params import ParamSet

log = logging.getLogger(__name__)


class EmptyMaskError(ValueError):
    """Positive points were requested from a mask with no foreground."""


@dataclass(frozen=True)
class PromptConfig:
    n_queries: int = 8
    k_pos_train: int = 3
    k_neg_train: int = 3
    k_pos_eval: int = 1
    k_neg_eval: int = 0


@dataclass
class PointPrompt:
    """Click coordinates normalized to [0, 1]^2, (x, y) order."""

    positives: list[tuple[float, float]]
    negatives: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.positives) < 1:
            raise ParameterError("a prompt needs at least one positive point")
        for x, y in list(self.positives) + list(self.negatives):
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                raise ParameterError(f"point ({x}, {y}) outside [0, 1]^2")

    def canonical(self) -> tuple[np.ndarray, np.ndarray]:
        """(points, signs) with each sign group sorted by (x, y)."""
        pos = sorted(self.positives)
        neg = sorted(self.negatives)
        pts = np.array(pos + neg, dtype=np.float64).reshape(-1, 2)
        signs = np.array([1] * len(pos) + [0] * len(neg), dtype=np.int64)
        return pts, signs


def init_prompt(
    ps: ParamSet,
    cfg: PromptConfig,
    embed_dim: int,
    rng: np.random.Generator,
    dtype=np.float64,
    mode: str = "visual",
) -> None:
    d = embed_dim
    tn = lambda *s: trunc_normal(rng, s, dtype=dtype)
    ps.add("prompt.queries", tn(cfg.n_queries, d))
    ps.add("prompt.role", tn(2, d))
    for w in ("wq", "wk", "wv", "wo"):
        ps.add("prompt.self." + w, tn(d, d))
    for w in ("wq", "wk", "wv"):
        ps.add("prompt.cross." + w, tn(d, d))
    # zero out-projection: the block is exactly the identity until trained
    ps.add("prompt.cross.wo", np.zeros((d, d), dtype=dtype))
    for name in ("prompt.norm_t", "prompt.norm_x", "prompt.norm_q"):
        ps.add(name + ".g", np.ones(d, dtype=dtype))
        ps.add(name + ".b", np.zeros(d, dtype=dtype))
    if mode == "positional":
        ps.add("prompt.pe.w", tn(16, d))


def sample_points(
    mask: np.ndarray, k_pos: int, k_neg: int, rng: np.random.Generator
) -> PointPrompt:
    """Draw clicks from a binary mask.

    Positives are weighted by the interior distance transform, so clicks
    concentrate away from the boundary the way a human would place them.
    Negatives are uniform over the background.  Requests larger than the
    available pixel pool are truncated with a warning.
    """
    mask = np.asarray(mask)
    h, w = mask.shape
    fg = np.argwhere(mask > 0)
    if k_pos > 0 and len(fg) == 0:
        raise EmptyMaskError("cannot sample positive points from an empty mask")
    if k_pos > len(fg):
        log.debug("asked for %d positives, mask has %d pixels", k_pos, len(fg))
        k_pos = len(fg)

    def to_xy(rows_cols: np.ndarray) -> list[tuple[float, float]]:
        xs = rows_cols[:, 1] / (w - 1) if w > 1 else np.zeros(len(rows_cols))
        ys = rows_cols[:, 0] / (h - 1) if h > 1 else np.zeros(len(rows_cols))
        return [(float(x), float(y)) for x, y in zip(xs, ys)]

    dist = ndimage.distance_transform_edt(mask > 0)
    weights = dist[fg[:, 0], fg[:, 1]]
    weights = weights / weights.sum()
    pos_idx = rng.choice(len(fg), size=k_pos, replace=False, p=weights)
    positives = to_xy(fg[pos_idx])

    negatives: list[tuple[float, float]] = []
    if k_neg > 0:
        bg = np.argwhere(mask == 0)
        if k_neg > len(bg):
            log.debug("asked for %d negatives, mask has %d pixels", k_neg, len(bg))
            k_neg = len(bg)
        if k_neg > 0:
            neg_idx = rng.choice(len(bg), size=k_neg, replace=False)
            negatives = to_xy(bg[neg_idx])
    return PointPrompt(positives, negatives)


def fourier_features(pts: np.ndarray, dtype=np.float64) -> np.ndarray:
    """(p, 2) normalized points -> (p, 16) sin/cos features at 4 frequencies."""
    freqs = np.array([1.0, 2.0, 4.0, 8.0])
    ang_x = 2.0 * np.pi * pts[:, :1] * freqs
    ang_y = 2.0 * np.pi * pts[:, 1:] * freqs
    feats = np.concatenate(
        [np.sin(ang_x), np.cos(ang_x), np.sin(ang_y), np.cos(ang_y)], axis=1
    )
    return feats.astype(dtype)


def _attention(q_in: Tensor, kv_in: Tensor, ps: ParamSet, pre: str) -> Tensor:
    d = q_in.shape[1]
    scale = 1.0 / math.sqrt(d)
    att = ad.softmax_rows(
        ad.mul(
            ad.matmul(ad.matmul(q_in, ps[pre + "wq"]),
                      ad.transpose(ad.matmul(kv_in, ps[pre + "wk"]))),
            scale,
        )
    )
    return ad.matmul(ad.matmul(att, ad.matmul(kv_in, ps[pre + "wv"])), ps[pre + "wo"])


def self_sample(
    ps: ParamSet,
    cfg: PromptConfig,
    prompt: PointPrompt,
    fmap: Tensor,
    mode: str = "visual",
) -> Tensor:
    """Fold a point prompt into a (d, g, g) feature map; same shape out."""
    if mode not in ("visual", "positional"):
        raise ParameterError(f"unknown prompt mode {mode!r}")
    pts, signs = prompt.canonical()
    if mode == "visual":
        feats = ad.bilinear_sample(fmap, pts)
    else:
        pe = fourier_features(pts, dtype=fmap.data.dtype)
        feats = ad.matmul(Tensor(pe), ps["prompt.pe.w"])
    # role embedding by sign, via a constant selector so the rows get grads
    sel = np.zeros((len(signs), 2), dtype=fmap.data.dtype)
    sel[np.arange(len(signs)), 1 - signs] = 1.0
    feats = ad.add(feats, ad.matmul(Tensor(sel), ps["prompt.role"]))

    tokens = ad.concat([ps["prompt.queries"], feats], axis=0)
    normed = ad.layer_norm(tokens, ps["prompt.norm_t.g"], ps["prompt.norm_t.b"])
    tokens = ad.add(tokens, _attention(normed, normed, ps, "prompt.self."))
    queries = ad.narrow(tokens, 0, 0, cfg.n_queries)

    x = map_to_tokens(fmap)
    xq = ad.layer_norm(x, ps["prompt.norm_x.g"], ps["prompt.norm_x.b"])
    qn = ad.layer_norm(queries, ps["prompt.norm_q.g"], ps["prompt.norm_q.b"])
    x = ad.add(x, _attention(xq, qn, ps, "prompt.cross."))
    return tokens_to_map(x, fmap.shape[1])
