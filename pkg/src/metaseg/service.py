"""HTTP service: volumes, interactive segmentation, adaptation sessions.

JSON everywhere except the PNG slice endpoint.  Masks travel as row-major
run-length encoding: alternating run counts starting with a zeros run (which
may be 0), plus the mask shape.  Sessions hold an adapted parameter copy;
adaptation is exclusive per session (409 while one is running) and never
touches the base checkpoint, while segmentation reads a snapshot and is safe
to call concurrently.
"""

from __future__ import annotations

import logging
import threading
import uuid
from dataclasses import dataclass, field as dc_field
from importlib import metadata
from pathlib import Path
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .checkpoint import load_checkpoint
from .config import ModelConfig
from .data import Episode, Volume, dsc, load_volume, slice_png
from .metaopt import MetaConfig, evaluate_episodes, online_optimize
from .model import predict
from .params import ParamSet
from .prompt import PointPrompt

log = logging.getLogger(__name__)


def rle_encode(mask: np.ndarray) -> dict:
    """Row-major RLE: alternating counts, zeros first (leading 0 if mask
    starts with foreground); counts always sum to h*w."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-d, got shape {arr.shape}")
    flat = (arr.reshape(-1) > 0).astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0] == 1:
        counts = [0] + counts
    return {"shape": [int(arr.shape[0]), int(arr.shape[1])], "counts": counts}


def rle_decode(payload: dict) -> np.ndarray:
    h, w = payload["shape"]
    counts = payload["counts"]
    if any(c < 0 for c in counts):
        raise ValueError("rle counts must be non-negative")
    if sum(counts) != h * w:
        raise ValueError(f"rle counts sum to {sum(counts)}, shape wants {h * w}")
    out = np.zeros(h * w, dtype=np.uint8)
    pos, val = 0, 0
    for c in counts:
        out[pos:pos + c] = val
        pos += c
        val = 1 - val
    return out.reshape(h, w)


# ---------------------------------------------------------------------------
# request/response schemas


class PointIn(BaseModel):
    x: float = Field(ge=0.0, le=1.0)
    y: float = Field(ge=0.0, le=1.0)
    sign: Literal[1, -1]


class SessionRequest(BaseModel):
    checkpoint: str


class AdaptRequest(BaseModel):
    volume: str
    organ: str
    chunk: int = Field(ge=0)
    steps: int = Field(default=5, ge=0)
    alpha: float = Field(default=1e-2, ge=0.0)
    seed: int = 0


class SegmentRequest(BaseModel):
    volume: str
    slice: int = Field(ge=0)
    points: list[PointIn]
    organ: str | None = None


@dataclass
class Session:
    session_id: str
    checkpoint: str
    params: ParamSet
    cfg: ModelConfig
    history: list[dict] = dc_field(default_factory=list)
    lock: threading.Lock = dc_field(default_factory=threading.Lock)


def _version() -> str:
    try:
        return metadata.version("metaseg")
    except metadata.PackageNotFoundError:
        return "0.0.0"


def create_app(
    data_dir: str | Path,
    checkpoint_dir: str | Path | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    """App factory; volumes are read once from ``data_dir`` (*.json manifests),
    checkpoints resolve against ``checkpoint_dir`` (defaults to data_dir).
    ``ui_dir`` optionally mounts a built browser client at the root path."""
    data_dir = Path(data_dir)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else data_dir
    app = FastAPI(title="metaseg", version=_version())

    volumes: dict[str, Volume] = {}
    for manifest in sorted(data_dir.glob("*.json")):
        vol = load_volume(manifest)
        volumes[vol.volume_id] = vol
    log.info("serving %d volumes from %s", len(volumes), data_dir)
    sessions: dict[str, Session] = {}
    app.state.volumes = volumes
    app.state.sessions = sessions

    @app.exception_handler(RequestValidationError)
    def _bad_request(request: Request, exc: RequestValidationError):
        err = exc.errors()[0]
        where = ".".join(str(p) for p in err["loc"] if p != "body") or "body"
        return JSONResponse(
            status_code=400,
            content={"detail": f"invalid field '{where}': {err['msg']}"},
        )

    def get_volume(vid: str) -> Volume:
        if vid not in volumes:
            raise HTTPException(404, f"unknown volume '{vid}'")
        return volumes[vid]

    def get_session(sid: str) -> Session:
        if sid not in sessions:
            raise HTTPException(404, f"unknown session '{sid}'")
        return sessions[sid]

    @app.get("/health")
    def health():
        return {"status": "ok", "version": _version()}

    @app.get("/volumes")
    def list_volumes():
        return [
            {
                "id": v.volume_id,
                "n_slices": v.n_slices,
                "shape": list(v.slices.shape[1:]),
                "organs": v.organs,
                "n_chunks": len(v.chunks),
            }
            for v in volumes.values()
        ]

    @app.get("/volumes/{vid}/slices/{k}.png")
    def get_slice(vid: str, k: int):
        vol = get_volume(vid)
        if not 0 <= k < vol.n_slices:
            raise HTTPException(404, f"slice {k} out of range [0, {vol.n_slices})")
        return Response(content=slice_png(vol, k), media_type="image/png")

    @app.post("/sessions")
    def open_session(body: SessionRequest):
        path = ckpt_dir / body.checkpoint
        if not path.is_file():
            raise HTTPException(404, f"unknown checkpoint '{body.checkpoint}'")
        params, cfg = load_checkpoint(path)
        sid = "s-" + uuid.uuid4().hex[:12]
        sessions[sid] = Session(sid, body.checkpoint, params, cfg)
        return {"session_id": sid}

    @app.delete("/sessions/{sid}")
    def close_session(sid: str):
        get_session(sid)
        del sessions[sid]
        return {"deleted": sid}

    @app.post("/sessions/{sid}/adapt")
    def adapt(sid: str, body: AdaptRequest):
        ses = get_session(sid)
        vol = get_volume(body.volume)
        if body.organ not in vol.masks:
            raise HTTPException(404, f"volume '{body.volume}' has no organ "
                                     f"'{body.organ}'")
        if not 0 <= body.chunk < len(vol.chunks):
            raise HTTPException(404, f"chunk {body.chunk} out of range "
                                     f"[0, {len(vol.chunks)})")
        chunk = vol.chunks[body.chunk]
        mask = vol.masks[body.organ]
        if mask[chunk.support].sum() == 0:
            raise HTTPException(400, f"chunk {body.chunk} support slice has no "
                                     f"'{body.organ}' foreground")
        queries = [(vol.slices[q], mask[q]) for q in chunk.queries
                   if mask[q].sum() > 0]
        if not queries:
            raise HTTPException(400, f"chunk {body.chunk} has no usable query "
                                     f"slices for '{body.organ}'")
        episode = Episode(body.organ, vol.slices[chunk.support],
                          mask[chunk.support], queries, vol.volume_id, body.chunk)
        support_pair = Episode(body.organ, episode.support_image,
                               episode.support_mask,
                               [(episode.support_image, episode.support_mask)],
                               vol.volume_id, body.chunk)
        if not ses.lock.acquire(blocking=False):
            raise HTTPException(409, f"session '{sid}' is adapting")
        try:
            mcfg = MetaConfig(alpha=body.alpha, inner_steps=body.steps)
            before = evaluate_episodes(ses.params, ses.cfg, [episode], body.seed)
            adapted, trace = online_optimize(
                ses.params, [support_pair], mcfg, ses.cfg, body.seed,
                path=("session", body.volume, body.organ, body.chunk),
            )
            after = evaluate_episodes(adapted, ses.cfg, [episode], body.seed)
            ses.params = adapted
            entry = {
                "volume": body.volume, "organ": body.organ, "chunk": body.chunk,
                "steps": body.steps, "alpha": body.alpha,
                "loss_trace": trace, "dsc_before": before.mean_dsc,
                "dsc_after": after.mean_dsc,
            }
            ses.history.append(entry)
            return {"loss_trace": trace, "dsc_before": before.mean_dsc,
                    "dsc_after": after.mean_dsc}
        finally:
            ses.lock.release()

    @app.post("/sessions/{sid}/segment")
    def segment(sid: str, body: SegmentRequest):
        ses = get_session(sid)
        vol = get_volume(body.volume)
        if not 0 <= body.slice < vol.n_slices:
            raise HTTPException(404, f"slice {body.slice} out of range "
                                     f"[0, {vol.n_slices})")
        size = ses.cfg.encoder.image_size
        if vol.slices.shape[1:] != (size, size):
            raise HTTPException(400, f"invalid field 'volume': slice shape "
                                     f"{vol.slices.shape[1:]} does not match "
                                     f"model image_size {size}")
        if not any(p.sign == 1 for p in body.points):
            raise HTTPException(400, "invalid field 'points': at least one "
                                     "positive point required")
        prompt = PointPrompt(
            positives=[(p.x, p.y) for p in body.points if p.sign == 1],
            negatives=[(p.x, p.y) for p in body.points if p.sign == -1],
        )
        params = ses.params  # snapshot reference; adapt swaps wholesale
        mask = predict(params, ses.cfg, vol.slices[body.slice], prompt, None)
        out = {"mask_rle": rle_encode(mask)}
        if body.organ is not None:
            if body.organ not in vol.masks:
                raise HTTPException(404, f"volume '{body.volume}' has no organ "
                                         f"'{body.organ}'")
            out["dsc"] = dsc(mask, vol.masks[body.organ][body.slice])
        return out

    if ui_dir is not None:
        # mounted last so the API routes above keep precedence
        app.mount("/", StaticFiles(directory=Path(ui_dir), html=True), name="ui")

    return app
