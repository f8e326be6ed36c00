"""Command-line entry point.

Exit codes: 0 success, 2 usage/config error, 3 data or format error,
4 empty or degenerate input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .backend import SyntheticScenario, generate_scenario
from .config import ConfigError, RunConfig, build_section, dump_section, load_config, load_config_file, parse_sections
from .errors import (
    ContextOverflow,
    DegenerateVector,
    EmptyStore,
    InvalidArgument,
    InvalidDimension,
    MissingTrace,
    TraceFormatError,
    UnsupportedVersion,
    VidMemError,
)
from .pipeline import Selector, run_global_uniform, run_simulation
from .retrieval import DEFAULT_BUDGET, DEFAULT_LAMBDA, QueryEmbedding, Similarity, budgeted_retrieve
from .scoring import AggregationMode, compute_token_scores
from .selection import topk_indices
from .tracefile import read_trace, write_trace

log = logging.getLogger("vidmem")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_EMPTY = 0, 2, 3, 4

_DATA_ERRORS = (ContextOverflow, TraceFormatError, UnsupportedVersion, MissingTrace, InvalidDimension, OSError)


class UsageError(Exception):
    pass


def _origin(exc: BaseException) -> str:
    """Name of the innermost vidmem module the exception passed through."""
    name = "cli"
    for frame in traceback.extract_tb(exc.__traceback__):
        p = Path(frame.filename)
        if p.parent.name == "vidmem":
            name = p.stem
    return name


def _load(args) -> RunConfig:
    overrides = {}
    if getattr(args, "selector", None):
        try:
            overrides["selector"] = Selector.parse(args.selector)
        except InvalidArgument as exc:
            raise UsageError(str(exc)) from exc
    if args.config:
        return load_config_file(args.config, overrides)
    return load_config("", "<defaults>", overrides)


def cmd_gen_scenario(args) -> int:
    cfg = _load(args)
    out = Path(args.out or cfg.output.get("scenario_dir") or "scenario")
    out.mkdir(parents=True, exist_ok=True)
    data = generate_scenario(cfg.scenario)
    (out / "scenario.cfg").write_text(dump_section("scenario", cfg.scenario))
    truth = {
        "events": [
            {"clip_id": ev.clip_id, "indices": ev.indices.tolist(), "concept": ev.concept.tolist()}
            for ev in data.events
        ]
    }
    (out / "ground_truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'scenario.cfg'} and {out / 'ground_truth.json'} ({len(data.events)} events)")
    return EXIT_OK


def _scenario_from_file(path: str) -> SyntheticScenario:
    p = Path(path)
    if p.is_dir():
        p = p / "scenario.cfg"
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc.strerror}", None, str(p)) from exc
    sections = parse_sections(text, str(p))
    if set(sections) - {"scenario"}:
        raise ConfigError("scenario file may only contain a [scenario] section", None, str(p))
    return build_section(SyntheticScenario, "scenario", sections.get("scenario", {}), str(p))


def cmd_simulate(args) -> int:
    cfg = _load(args)
    scenario = _scenario_from_file(args.scenario) if args.scenario else cfg.scenario
    model = cfg.model
    if model.dim != scenario.dim:
        model = replace(model, dim=scenario.dim, head_dim=scenario.dim // model.n_heads)
    timings = args.timings or cfg.output.get("timings", False)
    state_path = args.state or cfg.output.get("state")
    if args.mode == "global-uniform":
        result = run_global_uniform(scenario, cfg.pipeline, model)
    else:
        result = run_simulation(scenario, cfg.pipeline, model, timings=timings, keep_outputs=state_path is not None)
    report = Path(args.report or cfg.output.get("report") or "report.json")
    report.write_text(result.report_json())
    if state_path:
        write_trace(state_path, result.outputs)
    m = result.metrics
    print(f"{cfg.pipeline.selector.value}: clips={m.clips_processed} selection_recall={m.selection_recall} "
          f"retrieval_recall_at_k={m.retrieval_recall_at_k} retained_recall={m.retained_recall} -> {report}")
    return EXIT_OK


def cmd_select(args) -> int:
    try:
        layers = [int(x) for x in args.layers.split(",") if x.strip()]
        agg = AggregationMode.parse(args.agg)
    except (ValueError, InvalidArgument) as exc:
        raise UsageError(f"bad --layers/--agg: {exc}") from exc
    outputs = read_trace(args.trace)
    records = []
    for out in outputs:
        n_vis = out.trace.layout.n_visual
        if not 1 <= args.n <= n_vis:
            raise UsageError(f"--n {args.n} outside [1, {n_vis}] for clip {out.trace.clip_id}")
        scores = compute_token_scores(out.trace, layers, agg).scores
        idx = topk_indices(scores, args.n)
        records.append({"clip_id": out.trace.clip_id, "indices": idx.tolist(), "scores": scores[idx].tolist()})
    text = json.dumps({"layers": layers, "agg": agg.value, "n": args.n, "clips": records}, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _read_query(path) -> QueryEmbedding:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # empty files are reported below
            rows = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise TraceFormatError(f"unreadable query file: {exc}", 0) from exc
    if rows.size == 0:
        raise EmptyStore("query file has no embeddings")
    return QueryEmbedding(rows)


def cmd_retrieve(args) -> int:
    store = [o.caption for o in read_trace(args.state)]
    query = _read_query(args.query_file)
    mode = Similarity(args.similarity)
    if not 0.0 <= args.lam <= 1.0:
        raise UsageError("--lambda must be in [0, 1]")
    if args.budget <= 0:
        raise UsageError("--budget must be positive")
    result = budgeted_retrieve(query, store, args.lam, args.budget, k=args.k, mode=mode)
    for rank, (cid, score) in enumerate(result.ranked, start=1):
        print(f"{rank}\t{cid}\t{score!r}")
    print(f"tokens_used={result.tokens_used} budget={result.budget}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    try:
        selectors = [Selector.parse(s) for s in args.selectors.split(",")]
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from exc
    rows = []
    for sel in selectors:
        pcfg = replace(cfg.pipeline, selector=sel)
        for seed in range(args.seed_start, args.seed_start + args.seeds):
            res = run_simulation(replace(cfg.scenario, seed=seed), pcfg, cfg.model)
            rows.append({"selector": sel.value, "seed": seed, **res.metrics.to_dict()})
    text = json.dumps({"runs": rows}, indent=2, sort_keys=True) + "\n"
    Path(args.out).write_text(text)
    for sel in selectors:
        mine = [r for r in rows if r["selector"] == sel.value]
        means = {k: np.mean([r[k] for r in mine if r[k] is not None] or [float("nan")])
                 for k in ("selection_recall", "retrieval_recall_at_k", "retained_recall")}
        print(sel.value, " ".join(f"{k}={v:.4f}" for k, v in means.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vidmem", description="Streaming video-memory engine")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    selector_names = [s.value for s in Selector]

    g = sub.add_parser("gen-scenario", help="write a scenario spec and its ground truth")
    g.add_argument("--config")
    g.add_argument("--out", help="output directory")
    g.set_defaults(func=cmd_gen_scenario)

    s = sub.add_parser("simulate", help="run the streaming pipeline over a scenario")
    s.add_argument("--config")
    s.add_argument("--scenario", help="scenario.cfg (or the directory holding it)")
    s.add_argument("--selector", choices=selector_names)
    s.add_argument("--report")
    s.add_argument("--state", help="also write the caption store as a trace file")
    s.add_argument("--mode", choices=["streaming", "global-uniform"], default="streaming")
    s.add_argument("--timings", action="store_true", help="include wall-clock timings in the report")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("select", help="select tokens offline from a trace file")
    c.add_argument("--trace", required=True)
    c.add_argument("--layers", default="5,9,14,20")
    c.add_argument("--agg", default="avg", choices=["avg", "max"])
    c.add_argument("--n", type=int, default=196)
    c.add_argument("--out")
    c.set_defaults(func=cmd_select)

    r = sub.add_parser("retrieve", help="rank stored captions for a query")
    r.add_argument("--state", required=True)
    r.add_argument("--query-file", required=True, help="whitespace-separated rows, one token embedding per line")
    r.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    r.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    r.add_argument("--k", type=int)
    r.add_argument("--similarity", choices=[m.value for m in Similarity], default="pooled")
    r.set_defaults(func=cmd_retrieve)

    w = sub.add_parser("sweep", help="run several selectors over a range of scenario seeds")
    w.add_argument("--config")
    w.add_argument("--selectors", default="attention,uniform,meanpool")
    w.add_argument("--seeds", type=int, default=10)
    w.add_argument("--seed-start", type=int, default=0)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EmptyStore, DegenerateVector) as exc:
        print(f"error [{_origin(exc)}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except _DATA_ERRORS as exc:
        print(f"error [{_origin(exc)}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except VidMemError as exc:
        print(f"error [{_origin(exc)}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
