"""Compare token selectors on planted-event scenarios.

Runs every selector (and the offline global-uniform baseline) over a range of
scenario seeds and prints mean selection recall, retrieval recall and
retained-token recall. Use ``--full-model`` for the 28-layer mock with the
default layer subset; the default is a 4-layer mock that runs in seconds.

    python scripts/selection_ablation.py --seeds 20 --out ablation.json
"""

import argparse
import json
import time
from dataclasses import replace

import numpy as np

from vidmem.backend import MockModelConfig, SyntheticScenario
from vidmem.pipeline import PipelineConfig, Selector, run_global_uniform, run_simulation

METRICS = ("selection_recall", "retrieval_recall_at_k", "retained_recall")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--clips", type=int, default=4)
    ap.add_argument("--events", type=int, default=2)
    ap.add_argument("--event-tokens", type=int, default=32)
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--max-mem", type=int, default=16)
    ap.add_argument("--full-model", action="store_true")
    ap.add_argument("--out")
    args = ap.parse_args()

    if args.full_model:
        model, pipe = MockModelConfig(), PipelineConfig(max_mem=args.max_mem)
    else:
        model = MockModelConfig(n_layers=4, caption_len=8)
        pipe = PipelineConfig(layer_subset=(0, 1, 2, 3), max_mem=args.max_mem)

    rows = []
    t0 = time.perf_counter()
    for seed in range(args.seeds):
        sc = SyntheticScenario(n_clips=args.clips, n_events=args.events, event_tokens=args.event_tokens,
                               noise_scale=args.noise, seed=seed)
        for sel in Selector:
            m = run_simulation(sc, replace(pipe, selector=sel), model).metrics
            rows.append({"method": sel.value, "seed": seed, **{k: getattr(m, k) for k in METRICS}})
        g = run_global_uniform(sc, pipe, model).metrics
        rows.append({"method": "global-uniform", "seed": seed, "selection_recall": g.selection_recall,
                     "retrieval_recall_at_k": None, "retained_recall": None})
    elapsed = time.perf_counter() - t0

    print(f"{'method':<16}" + "".join(f"{k:>24}" for k in METRICS))
    for method in [s.value for s in Selector] + ["global-uniform"]:
        mine = [r for r in rows if r["method"] == method]
        cells = []
        for k in METRICS:
            vals = [r[k] for r in mine if r[k] is not None]
            cells.append(f"{np.mean(vals):>24.3f}" if vals else f"{'-':>24}")
        print(f"{method:<16}" + "".join(cells))
    print(f"{args.seeds} seeds in {elapsed:.1f}s")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"args": vars(args), "runs": rows}, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
