"""Hierarchical deterministic RNG derivation.

Every stochastic site derives its generator from (seed, *tags) so runs are
reproducible and independent of execution order.  String tags hash through
sha256, not python's salted hash.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF  # SeedSequence wants non-negative
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """Generator keyed by the seed plus a path of int/str tags."""
    return np.random.default_rng([_tag_int(seed)] + [_tag_int(t) for t in tags])
