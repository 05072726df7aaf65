"""Command line entry points.

Subcommands: gen-data, train, adapt, eval, gradcheck, serve, ablate.  Every
subcommand takes --config (JSON, see config.py) and --seed; usage errors exit
2 (argparse convention), runtime failures print a diagnostic and exit 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

log = logging.getLogger(__name__)

DEFAULT_PORT = 8234          # METASEG_PORT
DEFAULT_DATA_DIR = "./data"  # METASEG_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metaseg",
        description="few-shot volumetric segmentation with online adaptation",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")

    p = sub.add_parser("gen-data", help="write synthetic volumes")
    common(p)
    p.add_argument("--out", type=Path, default=Path("data"))

    p = sub.add_parser("train", help="meta-train and write a checkpoint")
    common(p)
    p.add_argument("--data", type=Path, required=True,
                   help="directory of volume manifests")
    p.add_argument("--out", type=Path, default=Path("model.ckpt"))
    p.add_argument("--log", type=Path, default=None,
                   help="JSONL epoch log destination")
    p.add_argument("--trainer", choices=("meta", "pretrain"), default="meta")
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("adapt", help="online-adapt a checkpoint to one organ")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--organ", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--out", type=Path, default=None,
                   help="write the adapted checkpoint here")

    p = sub.add_parser("eval", help="per-organ DSC over a volume directory")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--json", type=Path, default=None,
                   help="also write the table as JSON")

    p = sub.add_parser("gradcheck", help="finite-difference oracle suite")
    common(p)

    p = sub.add_parser("serve", help="start the HTTP service")
    common(p)
    p.add_argument("--data", type=Path,
                   default=Path(os.environ.get("METASEG_DATA", DEFAULT_DATA_DIR)))
    p.add_argument("--checkpoint-dir", type=Path, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int,
                   default=int(os.environ.get("METASEG_PORT", DEFAULT_PORT)))
    p.add_argument("--ui", type=Path, default=None,
                   help="directory with a built browser client to serve at /")

    p = sub.add_parser("ablate", help="prompt x decoder x trainer comparison")
    common(p)
    p.add_argument("--out", type=Path, default=None,
                   help="write the comparison rows as JSON")
    p.add_argument("--cache", type=Path, default=None,
                   help="reuse / store per-variant results here")
    return parser


def _load_run_config(args):
    from .config import RunConfig, load_config

    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, meta=replace(cfg.meta, seed=args.seed))
    return cfg


def _load_volumes(data_dir: Path):
    from .data import load_volume

    manifests = sorted(Path(data_dir).glob("*.json"))
    if not manifests:
        raise FileNotFoundError(f"no volume manifests (*.json) in {data_dir}")
    return [load_volume(m) for m in manifests]


def cmd_gen_data(args) -> int:
    from .data import gen_volume, save_volume

    cfg = _load_run_config(args)
    d = cfg.data
    args.out.mkdir(parents=True, exist_ok=True)
    for i in range(d.n_volumes):
        vol = gen_volume(list(d.families), d.image_size, d.n_slices,
                         cfg.meta.seed, index=i, n_chunks=d.n_chunks)
        path = save_volume(vol, args.out / f"{vol.volume_id}.json")
        print(f"wrote {path} ({vol.n_slices} slices, "
              f"organs: {', '.join(vol.organs)})")
    return 0


def cmd_train(args) -> int:
    from .checkpoint import checkpoint_hash, save_checkpoint
    from .data import VolumeTaskSource
    from .metaopt import meta_train, pretrain

    cfg = _load_run_config(args)
    mcfg = cfg.meta
    if args.epochs is not None:
        mcfg = replace(mcfg, epochs=args.epochs)
    source = VolumeTaskSource(_load_volumes(args.data))
    log_fh = open(args.log, "w") if args.log else None

    def on_epoch(entry):
        line = {"epoch": entry.epoch, "lr": entry.lr,
                "meta_loss": entry.meta_loss, "task_losses": entry.task_losses}
        if log_fh:
            log_fh.write(json.dumps(line) + "\n")
            log_fh.flush()
        print(f"epoch {entry.epoch:3d}  lr {entry.lr:.3e}  "
              f"loss {entry.meta_loss:.4f}")

    trainer = meta_train if args.trainer == "meta" else pretrain
    try:
        params, _ = trainer(source, cfg.model, mcfg, callback=on_epoch)
    finally:
        if log_fh:
            log_fh.close()
    save_checkpoint(args.out, params, cfg.model)
    print(f"wrote {args.out} ({checkpoint_hash(args.out)[:12]})")
    return 0


def cmd_adapt(args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .metaopt import adapt_and_evaluate

    cfg = _load_run_config(args)
    params, model_cfg = load_checkpoint(args.checkpoint)
    mcfg = cfg.meta
    if args.steps is not None:
        mcfg = replace(mcfg, inner_steps=args.steps)
    if args.alpha is not None:
        mcfg = replace(mcfg, alpha=args.alpha)
    volumes = {v.volume_id: v for v in _load_volumes(args.data)}
    if args.volume not in volumes:
        raise KeyError(f"no volume {args.volume!r} in {args.data}")
    before, after, trace, adapted = adapt_and_evaluate(
        params, model_cfg, mcfg, volumes[args.volume], args.organ, mcfg.seed)
    print(f"dsc before {before.mean_dsc:.4f}  after {after.mean_dsc:.4f}  "
          f"({len(trace)} inner steps)")
    if args.out:
        save_checkpoint(args.out, adapted, model_cfg)
        print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import make_episodes
    from .metaopt import evaluate_episodes

    cfg = _load_run_config(args)
    params, model_cfg = load_checkpoint(args.checkpoint)
    volumes = _load_volumes(args.data)
    table: dict[str, float] = {}
    for organ in volumes[0].organs:
        episodes = [ep for v in volumes for ep in make_episodes(v, organ)]
        rep = evaluate_episodes(params, model_cfg, episodes, cfg.meta.seed)
        table[organ] = rep.mean_dsc
    width = max(len(o) for o in table)
    print(f"{'organ'.ljust(width)}  dsc")
    for organ, score in table.items():
        print(f"{organ.ljust(width)}  {score:.4f}")
    payload = json.dumps(table, indent=1, sort_keys=True)
    if args.json:
        args.json.write_text(payload)
        print(f"wrote {args.json}")
    else:
        print(payload)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    seed = args.seed if args.seed is not None else 0
    reports = run_suite(seeds=(seed, seed + 1, seed + 2))
    failed = [r for r in reports if not r.passed]
    worst = max(reports, key=lambda r: r.max_rel_err)
    print(f"{len(reports)} checks, {len(failed)} failed; "
          f"worst rel err {worst.max_rel_err:.3e} ({worst.name})")
    for r in failed:
        print(f"FAIL {r.name}: max rel err {r.max_rel_err:.3e}")
    return 1 if failed else 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.data, args.checkpoint_dir, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_ablate(args) -> int:
    from .benchmark import BenchConfig, variant_matrix
    from .config import DataConfig

    cfg = _load_run_config(args)
    d: DataConfig = cfg.data
    bench = BenchConfig(
        image_size=d.image_size, n_slices=d.n_slices, n_chunks=d.n_chunks,
        n_train_volumes=max(1, d.n_volumes - 1),
        n_test_volumes=max(1, d.n_volumes // 2),
        epochs=cfg.meta.epochs, alpha=cfg.meta.alpha, beta0=cfg.meta.beta0,
        inner_steps=cfg.meta.inner_steps,
        pairs_per_task=cfg.meta.pairs_per_task,
        tasks_per_batch=cfg.meta.tasks_per_batch,
        patch_size=cfg.model.encoder.patch_size,
        embed_dim=cfg.model.encoder.embed_dim,
        n_layers=cfg.model.encoder.n_layers,
        n_heads=cfg.model.encoder.n_heads,
        adapter_hidden=cfg.model.encoder.adapter_hidden,
        dtype=cfg.model.dtype,
    )
    rows = variant_matrix(bench, seed=cfg.meta.seed,
                          families=list(d.families), cache_dir=args.cache)
    print(f"{'prompt':<11} {'decoder':<8} {'trainer':<9} dsc")
    for r in rows:
        print(f"{r['prompt']:<11} {r['decoder']:<8} {r['trainer']:<9} "
              f"{r['dsc']:.4f}")
    if args.out:
        args.out.write_text(json.dumps(rows, indent=1))
        print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "serve": cmd_serve,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles usage errors with exit 2
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # uniform runtime failure contract
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
