"""Synthetic volumetric scenes, chunked episodes, DSC, and on-disk format.

A volume is a stack of grayscale slices containing one blob per organ family.
Families live in distinct image quadrants with disjoint intensity bands; each
organ is an ellipsoid whose in-plane center drifts smoothly along the stack
and whose cross-section shrinks to nothing near the volume ends.  Same-band
distractor blobs make intensity alone insufficient for segmentation.

Episodes follow a chunked protocol: the slice axis splits into n contiguous
chunks of near-equal size, the center slice of each chunk is the support and
the remaining slices are queries.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .autodiff import ParameterError, ShapeError
from .seeding import derive_rng

log = logging.getLogger(__name__)

MAGIC = b"MSEGV001"


class GenerationError(RuntimeError):
    """Rejection sampling could not place a blob without overlap."""


class FormatError(ValueError):
    """A volume file is malformed (magic, version, truncation)."""


class IntegrityError(ValueError):
    """Stored payload bytes do not match their recorded hash."""


@dataclass(frozen=True)
class OrganFamilySpec:
    name: str
    center_x: tuple[float, float]
    center_y: tuple[float, float]
    radius_x: tuple[float, float]
    radius_y: tuple[float, float]
    intensity: tuple[float, float]
    drift_amplitude: float = 0.04
    n_distractors: int = 2
    noise_sigma: float = 0.02


def default_families() -> list[OrganFamilySpec]:
    """Four quadrant-anchored families with disjoint intensity bands.

    Disjoint bands make every held-out family look genuinely novel: a model
    pooled over the other three keys its features to their bands, so the
    held-out band demands recalibration from the support pair, which is the
    regime fast adaptation targets.
    """
    bands = [(0.80, 0.92), (0.62, 0.74), (0.46, 0.58), (0.30, 0.42)]
    quads = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
    names = ["bright_upper_left", "light_upper_right", "mid_lower_left", "dark_lower_right"]
    out = []
    for name, (qx, qy), band in zip(names, quads, bands):
        out.append(
            OrganFamilySpec(
                name=name,
                center_x=(qx - 0.06, qx + 0.06),
                center_y=(qy - 0.06, qy + 0.06),
                radius_x=(0.10, 0.16),
                radius_y=(0.10, 0.16),
                intensity=band,
            )
        )
    return out


@dataclass(frozen=True)
class Chunk:
    start: int
    stop: int  # exclusive
    support: int

    @property
    def queries(self) -> list[int]:
        return [k for k in range(self.start, self.stop) if k != self.support]


@dataclass
class Volume:
    volume_id: str
    slices: np.ndarray  # (n, h, w) float32 in [0, 1]
    masks: dict[str, np.ndarray]  # organ -> (n, h, w) uint8
    chunks: list[Chunk]

    @property
    def n_slices(self) -> int:
        return self.slices.shape[0]

    @property
    def organs(self) -> list[str]:
        return list(self.masks)


@dataclass
class Episode:
    organ: str
    support_image: np.ndarray
    support_mask: np.ndarray
    queries: list[tuple[np.ndarray, np.ndarray]]
    volume_id: str = ""
    chunk_index: int = -1


def chunk_indices(n_slices: int, n_chunks: int = 12) -> list[Chunk]:
    """Contiguous chunks with sizes differing by at most one; support is the
    center slice (lower median for even sizes)."""
    if n_chunks < 1 or n_slices < n_chunks:
        raise ParameterError(f"cannot split {n_slices} slices into {n_chunks} chunks")
    base, extra = divmod(n_slices, n_chunks)
    chunks = []
    start = 0
    for i in range(n_chunks):
        size = base + (1 if i < extra else 0)
        support = start + (size - 1) // 2
        chunks.append(Chunk(start, start + size, support))
        start += size
    return chunks


def _ellipse_mask(size: int, cx: float, cy: float, rx: float, ry: float) -> np.ndarray:
    if rx <= 0 or ry <= 0:
        return np.zeros((size, size), dtype=np.uint8)
    coords = (np.arange(size) + 0.5) / size
    xx, yy = np.meshgrid(coords, coords)
    return (((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0).astype(np.uint8)


def _z_profile(t: float, t_center: float, t_extent: float) -> float:
    """Ellipsoid cross-section scale in [0, 1]; zero outside the z extent."""
    u = (t - t_center) / t_extent
    return math.sqrt(max(0.0, 1.0 - u * u))


@dataclass
class _Blob:
    cx: float
    cy: float
    rx: float
    ry: float
    value: float
    phase: float
    drift: float
    t_center: float
    t_extent: float

    def slice_mask(self, size: int, t: float) -> np.ndarray:
        s = _z_profile(t, self.t_center, self.t_extent)
        if s <= 0.0:
            return np.zeros((size, size), dtype=np.uint8)
        cx = self.cx + self.drift * math.sin(2.0 * math.pi * t + self.phase)
        cy = self.cy + self.drift * math.cos(2.0 * math.pi * t + 1.3 * self.phase)
        return _ellipse_mask(size, cx, cy, self.rx * s, self.ry * s)


def _sample_blob(spec: OrganFamilySpec, rng, main: bool) -> _Blob:
    u = rng.uniform
    if main:
        cx, cy = u(*spec.center_x), u(*spec.center_y)
        rx, ry = u(*spec.radius_x), u(*spec.radius_y)
    else:
        # distractors roam the whole frame and run smaller
        cx, cy = u(0.12, 0.88), u(0.12, 0.88)
        rx, ry = u(0.05, 0.09), u(0.05, 0.09)
    return _Blob(
        cx=cx,
        cy=cy,
        rx=rx,
        ry=ry,
        value=u(*spec.intensity),
        phase=u(0, 2 * math.pi),
        drift=spec.drift_amplitude,
        t_center=u(0.45, 0.55),
        t_extent=u(0.34, 0.46),
    )


def _mid_footprint(blob: _Blob, size: int) -> np.ndarray:
    return blob.slice_mask(size, blob.t_center)


def gen_volume(
    specs: list[OrganFamilySpec],
    size: int,
    n_slices: int,
    seed: int,
    index: int = 0,
    n_chunks: int = 12,
    max_tries: int = 200,
) -> Volume:
    """One volume containing every family's organ plus its distractors."""
    rng = derive_rng(seed, "volume", index)
    organs: list[tuple[OrganFamilySpec, _Blob]] = []
    placed: list[np.ndarray] = []

    def overlaps(candidate: np.ndarray, margin: int) -> bool:
        grown = (
            ndimage.binary_dilation(candidate, iterations=margin)
            if margin
            else candidate > 0
        )
        for other in placed:
            if np.any(grown & (other > 0)):
                return True
        return False

    def place(spec: OrganFamilySpec, main: bool) -> _Blob:
        # prefer a 2px separation margin; relax it on crowded frames before
        # giving up so small benchmark images stay generable
        for attempt in range(max_tries):
            margin = 2 if attempt < max_tries // 2 else (
                1 if attempt < 3 * max_tries // 4 else 0
            )
            blob = _sample_blob(spec, rng, main=main)
            fp = _mid_footprint(blob, size)
            if fp.sum() == 0:
                continue
            if not overlaps(fp, margin):
                placed.append(fp)
                return blob
        kind = "organ" if main else "distractor"
        raise GenerationError(f"could not place {kind} for family {spec.name!r}")

    for spec in specs:
        organs.append((spec, place(spec, main=True)))

    distractors: list[_Blob] = []
    for spec in specs:
        for _ in range(spec.n_distractors):
            distractors.append(place(spec, main=False))

    noise_sigma = max(s.noise_sigma for s in specs)
    slices = np.zeros((n_slices, size, size), dtype=np.float32)
    masks = {spec.name: np.zeros((n_slices, size, size), dtype=np.uint8) for spec in specs}
    coords = (np.arange(size) + 0.5) / size
    xx, yy = np.meshgrid(coords, coords)
    for k in range(n_slices):
        t = k / (n_slices - 1) if n_slices > 1 else 0.5
        # smooth background below every intensity band
        img = 0.08 + 0.05 * np.sin(2 * np.pi * (xx * 0.7 + 0.3 * t)) * np.cos(
            2 * np.pi * yy * 0.5
        )
        for blob in distractors:
            m = blob.slice_mask(size, t)
            img = np.where(m > 0, blob.value, img)
        for spec, blob in organs:
            m = blob.slice_mask(size, t)
            masks[spec.name][k] = m
            img = np.where(m > 0, blob.value, img)
        img = img + rng.normal(0.0, noise_sigma, size=(size, size))
        slices[k] = np.clip(img, 0.0, 1.0).astype(np.float32)

    return Volume(
        volume_id=f"vol-{seed}-{index}",
        slices=slices,
        masks=masks,
        chunks=chunk_indices(n_slices, n_chunks),
    )


def make_episodes(volume: Volume, organ: str) -> list[Episode]:
    """Chunk protocol: per-chunk center-slice support, remaining slices query.

    Chunks whose support slice has no foreground are skipped; queries with
    empty masks are dropped (no click could be placed there); chunks left
    with no queries are skipped.  Skips are logged, never fatal.
    """
    if organ not in volume.masks:
        raise ParameterError(f"volume has no organ {organ!r}")
    mask = volume.masks[organ]
    episodes = []
    for ci, chunk in enumerate(volume.chunks):
        if mask[chunk.support].sum() == 0:
            log.info("skip %s chunk %d: empty support", volume.volume_id, ci)
            continue
        queries = [
            (volume.slices[q], mask[q]) for q in chunk.queries if mask[q].sum() > 0
        ]
        if not queries:
            log.info("skip %s chunk %d: no usable queries", volume.volume_id, ci)
            continue
        episodes.append(
            Episode(
                organ=organ,
                support_image=volume.slices[chunk.support],
                support_mask=mask[chunk.support],
                queries=queries,
                volume_id=volume.volume_id,
                chunk_index=ci,
            )
        )
    return episodes


def pair_episode(image: np.ndarray, mask: np.ndarray, organ: str = "") -> Episode:
    """Degenerate self-supervised episode: one slice is both support and query."""
    return Episode(organ=organ, support_image=image, support_mask=mask,
                   queries=[(image, mask)])


def dsc(a: np.ndarray, b: np.ndarray) -> float:
    """Dice coefficient 2|A n B| / (|A| + |B|); two empty masks score 1."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"dsc shapes differ: {a.shape} vs {b.shape}")
    a = a > 0
    b = b > 0
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


class VolumeTaskSource:
    """Adapter from volumes to the sampling interface the meta-trainer uses."""

    def __init__(self, volumes: list[Volume], organs: list[str] | None = None):
        if not volumes:
            raise ParameterError("need at least one volume")
        self.volumes = volumes
        self.tasks = organs if organs is not None else volumes[0].organs
        self._pools: dict[str, list[tuple[int, int]]] = {}
        for organ in self.tasks:
            pool = [
                (vi, si)
                for vi, vol in enumerate(volumes)
                for si in range(vol.n_slices)
                if vol.masks[organ][si].sum() > 0
            ]
            if not pool:
                raise ParameterError(f"no nonempty slices for organ {organ!r}")
            self._pools[organ] = pool

    def sample_pairs(self, organ: str, k: int, rng: np.random.Generator) -> list[Episode]:
        pool = self._pools[organ]
        replace = k > len(pool)
        idx = rng.choice(len(pool), size=k, replace=replace)
        out = []
        for i in idx:
            vi, si = pool[int(i)]
            vol = self.volumes[vi]
            out.append(pair_episode(vol.slices[si], vol.masks[organ][si], organ))
        return out


# ---------------------------------------------------------------------------
# persistence: JSON manifest + two raw payload files with magic and hashes


def _sha(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def save_volume(volume: Volume, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    slices_bytes = MAGIC + np.ascontiguousarray(volume.slices, dtype="<f4").tobytes()
    organs = sorted(volume.masks)
    mask_stack = np.stack([volume.masks[o] for o in organs])
    masks_bytes = MAGIC + np.ascontiguousarray(mask_stack, dtype=np.uint8).tobytes()
    slices_file = path.with_suffix(".slices.bin")
    masks_file = path.with_suffix(".masks.bin")
    slices_file.write_bytes(slices_bytes)
    masks_file.write_bytes(masks_bytes)
    manifest = {
        "version": 1,
        "volume_id": volume.volume_id,
        "shape": list(volume.slices.shape),
        "organs": organs,
        "chunks": [[c.start, c.stop, c.support] for c in volume.chunks],
        "slices_file": slices_file.name,
        "masks_file": masks_file.name,
        "slices_sha256": _sha(slices_bytes),
        "masks_sha256": _sha(masks_bytes),
    }
    path.write_text(json.dumps(manifest, indent=1))
    return path


def _read_payload(path: Path, expect_sha: str, expect_n: int, what: str) -> bytes:
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{what} payload {path.name}: bad magic at offset 0")
    body = raw[len(MAGIC):]
    if len(body) != expect_n:
        raise FormatError(
            f"{what} payload {path.name}: expected {expect_n} bytes, found {len(body)}"
        )
    if _sha(raw) != expect_sha:
        raise IntegrityError(f"{what} payload {path.name}: sha256 mismatch")
    return body


def load_volume(path: str | Path) -> Volume:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest {path.name} is not valid JSON: {e}") from e
    if manifest.get("version") != 1:
        raise FormatError(f"unsupported volume version {manifest.get('version')!r}")
    n, h, w = manifest["shape"]
    organs = manifest["organs"]
    slices_raw = _read_payload(
        path.parent / manifest["slices_file"],
        manifest["slices_sha256"],
        n * h * w * 4,
        "slices",
    )
    masks_raw = _read_payload(
        path.parent / manifest["masks_file"],
        manifest["masks_sha256"],
        len(organs) * n * h * w,
        "masks",
    )
    slices = np.frombuffer(slices_raw, dtype="<f4").reshape(n, h, w).copy()
    stack = np.frombuffer(masks_raw, dtype=np.uint8).reshape(len(organs), n, h, w)
    masks = {o: stack[i].copy() for i, o in enumerate(organs)}
    chunks = [Chunk(s, e, sup) for s, e, sup in manifest["chunks"]]
    return Volume(manifest["volume_id"], slices, masks, chunks)


def slice_png(volume: Volume, k: int) -> bytes:
    """One slice as grayscale PNG bytes."""
    if not 0 <= k < volume.n_slices:
        raise ParameterError(f"slice {k} out of range [0, {volume.n_slices})")
    arr = (np.clip(volume.slices[k], 0, 1) * 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def mask_png(mask: np.ndarray, rgba=(255, 64, 64, 140)) -> bytes:
    """Binary mask as a translucent RGBA overlay PNG."""
    h, w = mask.shape
    out = np.zeros((h, w, 4), dtype=np.uint8)
    out[mask > 0] = rgba
    buf = io.BytesIO()
    Image.fromarray(out, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()
