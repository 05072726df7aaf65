"""Segmentation losses: class-balanced BCE plus soft-IoU, summed.

BCE uses the softplus identity -log sigmoid(x) = softplus(x) - x so large
logits never overflow.  Per-pixel weights swap the class frequencies
(w_pos = n_neg/n, w_neg = n_pos/n); an all-one-class target zeroes the
weight of its own class and the balanced term collapses to zero, which is
finite by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

IOU_EPS = 1e-6


@dataclass
class LossReport:
    total: float
    bce: float
    iou: float


def _check(logits: Tensor, target: np.ndarray) -> np.ndarray:
    target = np.asarray(target)
    if logits.shape != target.shape:
        raise ShapeError(f"logits {logits.shape} vs target {target.shape}")
    return (target > 0).astype(logits.data.dtype)


def balanced_bce(logits: Tensor, target: np.ndarray) -> Tensor:
    y = _check(logits, target)
    n = y.size
    n_pos = y.sum()
    w = np.where(y > 0, (n - n_pos) / n, n_pos / n)
    # softplus(x) - x*y is exactly -[y log s + (1-y) log(1-s)]
    per_px = ad.sub(ad.softplus(logits), ad.mul(logits, Tensor(y)))
    return ad.tmean(ad.mul(per_px, Tensor(w)))


def iou_loss(logits: Tensor, target: np.ndarray) -> Tensor:
    y = _check(logits, target)
    p = ad.sigmoid(logits)
    inter = ad.tsum(ad.mul(p, Tensor(y)))
    union = ad.sub(ad.add(ad.tsum(p), float(y.sum())), inter)
    return ad.sub(1.0, ad.div(ad.add(inter, IOU_EPS), ad.add(union, IOU_EPS)))


def pair_loss(logits: Tensor, target: np.ndarray) -> tuple[Tensor, LossReport]:
    """Total objective for one (prediction, mask) pair: bce + iou."""
    bce = balanced_bce(logits, target)
    iou = iou_loss(logits, target)
    total = ad.add(bce, iou)
    return total, LossReport(float(total.data), float(bce.data), float(iou.data))
