"""Print the context-budget arithmetic for a pipeline configuration.

    python scripts/context_budget.py --max-mem 16 --n-select 196
"""

import argparse
import json

from vidmem.pipeline import PipelineConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--clip-size", type=int, default=16)
    ap.add_argument("--tokens-per-frame", type=int, default=196)
    ap.add_argument("--max-mem", type=int, default=16)
    ap.add_argument("--n-select", type=int, default=196)
    ap.add_argument("--window", type=int, default=6272)
    args = ap.parse_args()
    cfg = PipelineConfig(clip_size=args.clip_size, tokens_per_frame=args.tokens_per_frame,
                         max_mem=args.max_mem, n_select=args.n_select, window=args.window)
    print(json.dumps(cfg.budget_summary(), indent=2))


if __name__ == "__main__":
    main()
