#!/usr/bin/env python3
"""Record deterministic service responses as JSON fixtures for the UI tests.

The browser client is contract-tested against these files instead of a live
service, so regenerate them whenever the wire format changes:

    python3 scripts/export_ui_fixtures.py

tests/test_service.py re-derives the same payloads and fails if the
committed fixtures drift from what the service actually returns.
"""

import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from metaseg.checkpoint import save_checkpoint
from metaseg.data import OrganFamilySpec, gen_volume, save_volume
from metaseg.encoder import EncoderConfig
from metaseg.model import ModelConfig, init_model
from metaseg.service import create_app, rle_decode

OUT = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"

CFG = ModelConfig(encoder=EncoderConfig(image_size=16, patch_size=4, embed_dim=8,
                                        n_layers=4, n_heads=2, adapter_hidden=2))
FAMS = [
    OrganFamilySpec("left_bright", (0.22, 0.32), (0.4, 0.6), (0.16, 0.24),
                    (0.16, 0.24), (0.75, 0.9), n_distractors=0),
    OrganFamilySpec("right_dark", (0.68, 0.78), (0.4, 0.6), (0.16, 0.24),
                    (0.16, 0.24), (0.3, 0.45), n_distractors=0),
]


def build_fixtures() -> dict[str, object]:
    """Replay the recorded interaction and return fixture-name -> payload."""
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        vol = gen_volume(FAMS, 16, 8, seed=0, n_chunks=4)
        save_volume(vol, root / "vol.json")
        save_checkpoint(root / "model.ckpt", init_model(CFG, 0), CFG)
        client = TestClient(create_app(root))

        fixtures: dict[str, object] = {
            "health": client.get("/health").json(),
            "volumes": client.get("/volumes").json(),
        }

        sid = client.post("/sessions",
                          json={"checkpoint": "model.ckpt"}).json()["session_id"]
        click = {"x": 0.3333333333333333, "y": 0.4666666666666667, "sign": 1}
        seg_req = {"volume": vol.volume_id, "slice": 3, "organ": "left_bright",
                   "points": [click]}
        seg = client.post(f"/sessions/{sid}/segment", json=seg_req).json()
        fixtures["segment"] = {
            "request": seg_req,
            "response": seg,
            "mask": rle_decode(seg["mask_rle"]).tolist(),
        }

        adapt_req = {"volume": vol.volume_id, "organ": "left_bright",
                     "chunk": 1, "steps": 3, "alpha": 0.01, "seed": 0}
        fixtures["adapt"] = {
            "request": adapt_req,
            "k_support_pairs": 1,
            "response": client.post(f"/sessions/{sid}/adapt",
                                    json=adapt_req).json(),
        }
        zero_req = dict(adapt_req, steps=0)
        fixtures["adapt_zero"] = {
            "request": zero_req,
            "k_support_pairs": 1,
            "response": client.post(f"/sessions/{sid}/adapt",
                                    json=zero_req).json(),
        }
    return fixtures


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for name, payload in build_fixtures().items():
        (OUT / f"{name}.json").write_text(json.dumps(payload, indent=1))
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()
