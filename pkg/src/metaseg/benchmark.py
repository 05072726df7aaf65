"""Directional benchmarks on the synthetic four-family corpus.

Three experiments, each reporting post-adaptation query DSC on held-out
volumes:

* meta_vs_pretrain — leave-one-family-out: meta-train on three families,
  adapt to the fourth at test time, against a pretrained (no inner loop)
  baseline given extra epochs to spend the same optimization signal.
* prompt_ablation — visual self-sampling vs positional codes vs no prompt.
* gating_ablation — mask-gated decoder vs plain decoder on the same scenes,
  whose same-band distractors are exactly what the gate is for.

Every run is seeded end to end; results are plain dicts so they serialize
to JSON, and may be cached per (experiment, configuration, seed) file.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Volume, VolumeTaskSource, default_families, gen_volume
from .encoder import EncoderConfig
from .metaopt import MetaConfig, adapt_and_evaluate, meta_train
from .model import ModelConfig
from .params import ParamSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchConfig:
    """Desk-scale sizing: small images, shallow model, short schedules."""

    image_size: int = 32
    patch_size: int = 8
    embed_dim: int = 24
    n_layers: int = 4
    n_heads: int = 4
    adapter_hidden: int = 8
    n_slices: int = 12
    n_chunks: int = 6
    n_train_volumes: int = 3
    n_test_volumes: int = 2
    epochs: int = 45
    pretrain_epoch_factor: float = 1.0  # same outer-update budget as meta
    alpha: float = 1e-1
    beta0: float = 1e-2
    inner_steps: int = 5
    pairs_per_task: int = 5   # 5-shot
    tasks_per_batch: int = 3
    dtype: str = "f32"


def model_config(bench: BenchConfig, prompt_mode: str = "visual",
                 decoder_mode: str = "gated") -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(
            image_size=bench.image_size,
            patch_size=bench.patch_size,
            embed_dim=bench.embed_dim,
            n_layers=bench.n_layers,
            n_heads=bench.n_heads,
            adapter_hidden=bench.adapter_hidden,
        ),
        prompt_mode=prompt_mode,
        decoder_mode=decoder_mode,
        dtype=bench.dtype,
    )


def meta_config(bench: BenchConfig, trainer: str, seed: int) -> MetaConfig:
    if trainer == "meta":
        return MetaConfig(alpha=bench.alpha, beta0=bench.beta0,
                          inner_steps=bench.inner_steps,
                          pairs_per_task=bench.pairs_per_task,
                          tasks_per_batch=bench.tasks_per_batch,
                          epochs=bench.epochs, seed=seed)
    if trainer == "pretrain":
        return MetaConfig(alpha=bench.alpha, beta0=bench.beta0, inner_steps=0,
                          pairs_per_task=bench.pairs_per_task,
                          tasks_per_batch=bench.tasks_per_batch,
                          epochs=int(round(bench.epochs * bench.pretrain_epoch_factor)),
                          seed=seed)
    raise ValueError(f"unknown trainer {trainer!r}")


def bench_volumes(bench: BenchConfig, seed: int, n: int, tag: str,
                  families=None) -> list[Volume]:
    """n fresh volumes; `tag` splits the generation stream so train and test
    sets never share scenes even at equal seeds."""
    fams = list(families) if families is not None else default_families()
    offset = {"train": 0, "test": 1000}.get(tag, 2000)
    return [gen_volume(fams, bench.image_size, bench.n_slices, seed,
                       index=offset + i, n_chunks=bench.n_chunks)
            for i in range(n)]


def train_variant(bench: BenchConfig, train_organs: list[str],
                  prompt_mode: str, decoder_mode: str, trainer: str,
                  seed: int, volumes: list[Volume]) -> tuple[ParamSet, ModelConfig, MetaConfig]:
    cfg = model_config(bench, prompt_mode, decoder_mode)
    mcfg = meta_config(bench, trainer, seed)
    source = VolumeTaskSource(volumes, organs=train_organs)
    t0 = time.perf_counter()
    params, _ = meta_train(source, cfg, mcfg)
    log.info("trained %s/%s/%s seed=%d in %.1fs", prompt_mode, decoder_mode,
             trainer, seed, time.perf_counter() - t0)
    return params, cfg, mcfg


def test_time_dsc(params: ParamSet, cfg: ModelConfig, bench: BenchConfig,
                  test_volumes: list[Volume], organ: str, seed: int) -> float:
    """Adapt online per volume, then pool per-episode query DSC."""
    mcfg = MetaConfig(alpha=bench.alpha, inner_steps=bench.inner_steps,
                      pairs_per_task=bench.pairs_per_task, seed=seed)
    scores: list[float] = []
    for vol in test_volumes:
        _, after, _, _ = adapt_and_evaluate(params, cfg, mcfg, vol, organ, seed)
        scores.extend(after.per_episode)
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# result caching: one JSON file per trained-and-scored variant, so the
# experiments below share runs (the visual/gated/meta variant appears in two)


def _run_key(bench: BenchConfig, **kw) -> str:
    payload = json.dumps({"bench": asdict(bench), **kw}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def variant_dsc(bench: BenchConfig, prompt_mode: str, decoder_mode: str,
                trainer: str, train_organs: list[str], eval_organs: list[str],
                seed: int, cache_dir=None, families=None) -> dict:
    """Train one variant and score it per eval organ on fresh volumes."""
    fams = list(families) if families is not None else default_families()

    def compute():
        train_vols = bench_volumes(bench, seed, bench.n_train_volumes, "train",
                                   families=fams)
        test_vols = bench_volumes(bench, seed, bench.n_test_volumes, "test",
                                  families=fams)
        params, cfg, _ = train_variant(bench, train_organs, prompt_mode,
                                       decoder_mode, trainer, seed, train_vols)
        per_organ = {o: test_time_dsc(params, cfg, bench, test_vols, o, seed)
                     for o in eval_organs}
        return {"per_organ": per_organ,
                "mean": float(np.mean(list(per_organ.values())))}

    if cache_dir is None:
        return compute()
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = _run_key(bench, prompt=prompt_mode, decoder=decoder_mode,
                   trainer=trainer, train_organs=sorted(train_organs),
                   eval_organs=sorted(eval_organs), seed=seed,
                   families=[asdict(f) for f in fams])
    path = cache_dir / f"run-{key}.json"
    if path.is_file():
        log.info("reusing cached run %s", path.name)
        return json.loads(path.read_text())
    result = compute()
    path.write_text(json.dumps(result, indent=1, sort_keys=True))
    return result


# ---------------------------------------------------------------------------
# experiments


def meta_vs_pretrain(bench: BenchConfig, seeds=(0, 1, 2),
                     cache_dir=None) -> dict:
    """Leave-one-family-out transfer gap, per family and seed."""
    names = [f.name for f in default_families()]
    out: dict = {"families": {}, "seeds": list(seeds)}
    for held in names:
        train_organs = [n for n in names if n != held]
        rows = {"meta": [], "pretrain": []}
        for seed in seeds:
            for trainer in ("meta", "pretrain"):
                res = variant_dsc(bench, "visual", "gated", trainer,
                                  train_organs, [held], seed, cache_dir)
                rows[trainer].append(res["per_organ"][held])
        meta_mean = float(np.mean(rows["meta"]))
        pre_mean = float(np.mean(rows["pretrain"]))
        out["families"][held] = {
            "meta": rows["meta"], "pretrain": rows["pretrain"],
            "meta_mean": meta_mean, "pretrain_mean": pre_mean,
            "delta": meta_mean - pre_mean,
        }
    return out


def _all_family_mean(bench: BenchConfig, prompt_mode: str, decoder_mode: str,
                     seed: int, cache_dir) -> float:
    names = [f.name for f in default_families()]
    res = variant_dsc(bench, prompt_mode, decoder_mode, "meta", names, names,
                      seed, cache_dir)
    return res["mean"]


def prompt_ablation(bench: BenchConfig, seeds=(0, 1, 2), cache_dir=None) -> dict:
    """Mean DSC for visual vs positional vs no prompt, gated decoder."""
    out: dict = {"seeds": list(seeds), "modes": {}}
    for mode in ("visual", "positional", "none"):
        vals = [_all_family_mean(bench, mode, "gated", s, cache_dir)
                for s in seeds]
        out["modes"][mode] = {"per_seed": vals, "mean": float(np.mean(vals))}
    return out


def gating_ablation(bench: BenchConfig, seeds=(0, 1, 2), cache_dir=None) -> dict:
    """Mean DSC for mask-gated vs plain decoding on distractor-laden scenes."""
    out: dict = {"seeds": list(seeds), "modes": {}}
    for mode in ("gated", "plain"):
        vals = [_all_family_mean(bench, "visual", mode, s, cache_dir)
                for s in seeds]
        out["modes"][mode] = {"per_seed": vals, "mean": float(np.mean(vals))}
    return out


def variant_matrix(bench: BenchConfig, seed: int = 0, families=None,
                   cache_dir=None) -> list[dict]:
    """The full prompt x decoder x trainer cross at one seed; the CLI's
    comparison table."""
    fams = list(families) if families is not None else default_families()
    names = [f.name for f in fams]
    rows = []
    for prompt_mode in ("visual", "positional", "none"):
        for decoder_mode in ("gated", "plain"):
            for trainer in ("meta", "pretrain"):
                res = variant_dsc(bench, prompt_mode, decoder_mode, trainer,
                                  names, names, seed, cache_dir,
                                  families=fams)
                rows.append({"prompt": prompt_mode, "decoder": decoder_mode,
                             "trainer": trainer, "dsc": res["mean"]})
    return rows
