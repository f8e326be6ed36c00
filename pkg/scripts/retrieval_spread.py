"""Caption-query versus visual-query similarity spread, and an MMR lambda sweep.

For each scenario seed, every event concept is compared with every stored
caption (pooled caption embedding) and with every clip's pooled visual
tokens. The script reports how often the caption spread (max - min) exceeds
the visual spread, then sweeps the MMR trade-off to show how retrieval
recall at 1 moves with lambda.

    python scripts/retrieval_spread.py --seeds 30
"""

import argparse
from dataclasses import replace

import numpy as np

from vidmem.backend import MockModelConfig, SyntheticScenario
from vidmem.pipeline import PipelineConfig, run_simulation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=30)
    ap.add_argument("--clips", type=int, default=6)
    ap.add_argument("--lambdas", default="0,0.25,0.5,0.75,1")
    ap.add_argument("--similarity", choices=["pooled", "pairwise"], default="pooled")
    args = ap.parse_args()

    model = MockModelConfig(n_layers=4, caption_len=8)
    pipe = PipelineConfig(layer_subset=(0, 1, 2, 3))
    pipe = replace(pipe, similarity=type(pipe.similarity)(args.similarity))
    lambdas = [float(x) for x in args.lambdas.split(",")]

    spreads, recall = [], {lam: [] for lam in lambdas}
    for seed in range(args.seeds):
        sc = SyntheticScenario(n_clips=args.clips, n_events=2, seed=seed)
        for i, lam in enumerate(lambdas):
            res = run_simulation(sc, replace(pipe, mmr_lambda=lam), model)
            recall[lam].append(res.metrics.retrieval_recall_at_k)
            if i == 0:  # captions do not depend on lambda
                sp = res.report["similarity_spread"]
                spreads.append((sp["caption_query"], sp["visual_query"]))

    cap, vis = np.array(spreads).T
    print(f"caption spread mean {cap.mean():.3f}, visual spread mean {vis.mean():.3f}")
    print(f"caption > visual in {(cap > vis).sum()}/{len(cap)} seeds")
    print("lambda  recall@1")
    for lam in lambdas:
        print(f"{lam:6.2f}  {np.mean(recall[lam]):.3f}")


if __name__ == "__main__":
    main()
