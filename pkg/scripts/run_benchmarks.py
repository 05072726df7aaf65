#!/usr/bin/env python3
"""Populate the results/ cache behind the slow acceptance tests.

Runs the three benchmark grids (meta vs pretrain leave-one-family-out,
prompt-mode ablation, decoder-gating ablation) at the default BenchConfig
and caches every trained variant under results/.  The slow tests in
tests/test_acceptance.py reuse the cache, so a full pytest run after this
script finishes in seconds; delete results/ to force recomputation.

Runs are deterministic per (config, seed), so interrupting and restarting
the script only recomputes what is missing.
"""

import argparse
import json
import time
from pathlib import Path

from metaseg.benchmark import (
    BenchConfig,
    gating_ablation,
    meta_vs_pretrain,
    prompt_ablation,
)

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cache", default=str(ROOT / "results"),
                    help="cache directory (default: results/ next to the package)")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    cache = args.cache
    seeds = tuple(args.seeds)
    bench = BenchConfig()
    t0 = time.time()

    print("== meta vs pretrain, leave-one-family-out ==", flush=True)
    rows = meta_vs_pretrain(bench, seeds=seeds, cache_dir=cache)
    for fam, row in rows["families"].items():
        print(f"{fam}: meta {row['meta_mean']:.3f} "
              f"pretrain {row['pretrain_mean']:.3f} "
              f"delta {100 * row['delta']:+.1f}", flush=True)

    print("== prompt ablation ==", flush=True)
    prompts = prompt_ablation(bench, seeds=seeds, cache_dir=cache)
    for mode, r in prompts["modes"].items():
        print(f"{mode}: {r['mean']:.3f}", flush=True)

    print("== decoder gating ablation ==", flush=True)
    gates = gating_ablation(bench, seeds=seeds, cache_dir=cache)
    for mode, r in gates["modes"].items():
        print(f"{mode}: {r['mean']:.3f}", flush=True)

    summary = {
        "meta_vs_pretrain": rows,
        "prompt_ablation": prompts,
        "gating_ablation": gates,
        "seeds": list(seeds),
        "elapsed_s": round(time.time() - t0, 1),
    }
    out = Path(cache) / "summary.json"
    out.write_text(json.dumps(summary, indent=2))
    print(f"total {summary['elapsed_s']}s, summary at {out}", flush=True)


if __name__ == "__main__":
    main()
