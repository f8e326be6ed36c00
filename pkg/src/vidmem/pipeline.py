"""Streaming loop. Frames are buffered into clips; each clip is captioned and
its selected tokens are carried forward in a FIFO for the next clip. Queries
are answered from the stored captions.

``run_simulation`` drives the loop over a planted-event scenario and
produces a deterministic report. Wall-clock timings are kept out of the
report unless requested, so that repeated runs are byte-identical.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .backend import Backend, BackendOutput, MockBackend, MockModelConfig, ScenarioData, SyntheticScenario, generate_scenario
from .errors import EmptyStore, InvalidArgument, InvalidDimension
from .memory import ContextAssembly, ContextBudget, ShortTermMemory, assemble_context
from .numerics import Rng, cosine_many
from .retrieval import (
    CaptionRecord,
    QueryEmbedding,
    RetrievalResult,
    Similarity,
    budgeted_retrieve,
    caption_similarity,
)
from .scoring import AggregationMode, TokenLayout, compute_token_scores
from .selection import (
    ClipTokens,
    SelectedTokenSet,
    kmeans_select,
    mean_pool,
    select_attention_topk,
    select_uniform,
)


# a random direction has cosine ~ N(0, 1/dim) with a fixed concept
RETAINED_SIGMAS = 5.0


class Selector(enum.Enum):
    ATTENTION = "attention"
    UNIFORM = "uniform"
    MEANPOOL = "meanpool"
    KMEANS = "kmeans"

    @classmethod
    def parse(cls, name: str) -> "Selector":
        key = name.strip().lower().replace("-", "").replace("_", "")
        for s in cls:
            if s.value == key:
                return s
        raise InvalidArgument(f"unknown selector {name!r}; valid: {', '.join(s.value for s in cls)}")


@dataclass(frozen=True)
class PipelineConfig:
    clip_size: int = 16
    max_mem: int = 16
    tokens_per_frame: int = 196
    n_select: int = 196
    window: int = 6272
    memory_half: int | None = None  # None: even split of window
    layer_subset: tuple[int, ...] = (5, 9, 14, 20)
    aggregation: AggregationMode = AggregationMode.MEAN
    selector: Selector = Selector.ATTENTION
    mmr_lambda: float = 0.5
    retrieval_budget: int = 10_000
    retrieval_k: int | None = None
    recall_k: int = 1
    similarity: Similarity = Similarity.POOLED
    seed: int = 0

    def __post_init__(self):
        if min(self.clip_size, self.tokens_per_frame, self.n_select) < 1:
            raise InvalidArgument("clip_size, tokens_per_frame and n_select must be >= 1")
        if self.max_mem < 0:
            raise InvalidArgument("max_mem must be >= 0")
        if self.n_select > self.clip_tokens:
            raise InvalidArgument(f"n_select {self.n_select} exceeds clip tokens {self.clip_tokens}")
        if not self.layer_subset:
            raise InvalidArgument("layer_subset is empty")
        if not 0.0 <= self.mmr_lambda <= 1.0:
            raise InvalidArgument("mmr_lambda must be in [0, 1]")
        if self.retrieval_budget <= 0 or self.recall_k < 1:
            raise InvalidArgument("retrieval_budget and recall_k must be positive")
        if self.max_mem * self.n_select + self.clip_tokens > self.window:
            raise InvalidArgument(
                f"max_mem*n_select + clip tokens = {self.max_mem * self.n_select + self.clip_tokens} "
                f"exceeds window {self.window}"
            )
        b = self.budget  # validates the split
        if self.clip_tokens > b.clip_half or self.memory_capacity > b.memory_half:
            raise InvalidArgument(f"budget split {b.memory_half}/{b.clip_half} cannot hold memory and clip")

    @property
    def clip_tokens(self) -> int:
        return self.clip_size * self.tokens_per_frame

    @property
    def memory_capacity(self) -> int:
        return self.max_mem * self.n_select

    @property
    def budget(self) -> ContextBudget:
        if self.memory_half is None:
            return ContextBudget.even(self.window)
        return ContextBudget(self.window, self.memory_half, self.window - self.memory_half)

    def budget_summary(self) -> dict:
        b = self.budget
        return {
            "window": b.window,
            "memory_half": b.memory_half,
            "clip_half": b.clip_half,
            "clip_tokens": self.clip_tokens,
            "n_select": self.n_select,
            "selection_rate": self.n_select / self.clip_tokens,
            "memory_capacity": self.memory_capacity,
            "max_context": self.memory_capacity + self.clip_tokens,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_subset"] = list(self.layer_subset)
        for k in ("aggregation", "selector", "similarity"):
            d[k] = getattr(self, k).value
        return d


@dataclass
class RunMetrics:
    clips_processed: int = 0
    frames_in: int = 0
    queries_answered: int = 0
    selection_recall: float | None = None
    retrieval_recall_at_k: float | None = None
    retained_recall: float | None = None
    context_utilization: float = 0.0
    wall_clock_per_clip: float = field(default=0.0, compare=False)

    def to_dict(self, timings: bool = False) -> dict:
        d = asdict(self)
        if not timings:
            del d["wall_clock_per_clip"]
        return d


@dataclass
class ClipLog:
    clip_id: int
    n_memory: int
    n_visual: int
    selected: np.ndarray
    seconds: float = 0.0


@dataclass
class StreamState:
    memory: ShortTermMemory
    buffer: list[np.ndarray] = field(default_factory=list)
    captions: list[CaptionRecord] = field(default_factory=list)
    metrics: RunMetrics = field(default_factory=RunMetrics)
    log: list[ClipLog] = field(default_factory=list)
    next_clip_id: int = 0
    last_selected: SelectedTokenSet | None = None
    outputs: list[BackendOutput] | None = None  # kept only when requested

    @classmethod
    def fresh(cls, config: PipelineConfig, keep_outputs: bool = False) -> "StreamState":
        return cls(memory=ShortTermMemory(config.max_mem), outputs=[] if keep_outputs else None)


def select_tokens(clip: ClipTokens, output, config: PipelineConfig) -> SelectedTokenSet:
    sel = config.selector
    if sel is Selector.ATTENTION:
        scores = compute_token_scores(output.trace, config.layer_subset, config.aggregation)
        return select_attention_topk(clip, scores, config.n_select)
    if sel is Selector.UNIFORM:
        return select_uniform(clip, config.n_select)
    if sel is Selector.MEANPOOL:
        return mean_pool(clip, config.n_select)
    return kmeans_select(clip, config.n_select, Rng(config.seed).fork(7, clip.clip_id))


def process_clip(state: StreamState, clip: ClipTokens, config: PipelineConfig, backend: Backend) -> SelectedTokenSet:
    t0 = time.perf_counter()
    ctx = assemble_context(state.memory, clip, config.budget, backend.n_instruction, backend.n_caption)
    out = backend.process_clip(ctx)
    selected = select_tokens(clip, out, config)
    state.memory.push(selected)
    state.captions.append(out.caption)
    state.last_selected = selected
    if state.outputs is not None:
        state.outputs.append(out)
    state.log.append(ClipLog(clip.clip_id, ctx.layout.n_memory, ctx.layout.n_visual, selected.indices,
                             time.perf_counter() - t0))
    m = state.metrics
    m.clips_processed += 1
    used = ctx.n_visual_context / config.window
    m.context_utilization += (used - m.context_utilization) / m.clips_processed
    m.wall_clock_per_clip += (state.log[-1].seconds - m.wall_clock_per_clip) / m.clips_processed
    return selected


def process_frame(state: StreamState, frame, config: PipelineConfig, backend: Backend) -> StreamState:
    """Buffer one frame; run the clip step when the buffer reaches ``clip_size``."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.shape[0] != config.tokens_per_frame:
        raise InvalidDimension(f"frame must have {config.tokens_per_frame} token rows, got shape {frame.shape}")
    if state.buffer and frame.shape[1] != state.buffer[0].shape[1]:
        raise InvalidDimension("frame dimension changed mid-clip")
    state.buffer.append(frame)
    state.metrics.frames_in += 1
    if len(state.buffer) == config.clip_size:
        clip_id = state.next_clip_id
        emb = np.concatenate(state.buffer)
        state.buffer.clear()
        state.next_clip_id += 1
        clip = ClipTokens(clip_id, config.clip_size, config.tokens_per_frame, emb, clip_id * config.clip_tokens)
        process_clip(state, clip, config, backend)
    return state


def answer_query(
    state: StreamState, query: QueryEmbedding, config: PipelineConfig, query_text: str = ""
) -> tuple[RetrievalResult, str]:
    """Retrieve captions for ``query`` from a snapshot of the store.

    The answer payload is a mock of generation: retrieved captions in clip
    order followed by the question.
    """
    store = list(state.captions)
    if not store:
        raise EmptyStore("no captions stored yet")
    result = budgeted_retrieve(
        query, store, config.mmr_lambda, config.retrieval_budget, k=config.retrieval_k, mode=config.similarity
    )
    by_id = {c.clip_id: c for c in store}
    lines = [by_id[cid].text for cid in sorted(result.clip_ids)]
    lines.append(f"Question: {query_text}")
    state.metrics.queries_answered += 1
    return result, "\n".join(lines)


# ---------------------------------------------------------------------------
# simulation harness


@dataclass
class SimulationResult:
    metrics: RunMetrics
    report: dict
    state: StreamState

    @property
    def outputs(self) -> list[BackendOutput]:
        return self.state.outputs or []

    def report_json(self) -> str:
        return json.dumps(self.report, indent=2, sort_keys=True) + "\n"


def _event_queries(data: ScenarioData) -> list[QueryEmbedding]:
    return [QueryEmbedding(ev.concept[None, :]) for ev in data.events]


def _spread(values: Sequence[float]) -> float | None:
    return float(max(values) - min(values)) if values else None


def run_simulation(
    scenario: SyntheticScenario | ScenarioData,
    config: PipelineConfig,
    model: MockModelConfig | None = None,
    backend: Backend | None = None,
    timings: bool = False,
    keep_outputs: bool = False,
) -> SimulationResult:
    """Stream every scenario clip frame by frame, then query each planted event.

    Metrics (``None`` when the scenario has no events):

    * selection_recall: planted tokens whose exact index was selected.
    * retrieval_recall_at_k: event queries whose clip is in the first
      ``recall_k`` captions of the budgeted MMR result.
    * retained_recall: event queries answerable from retained tokens alone:
      the event clip holds the retained token most similar to the concept
      (ties go to the lower clip id) and that similarity is significant,
      at least ``RETAINED_SIGMAS / sqrt(dim)``.
    """
    data = scenario if isinstance(scenario, ScenarioData) else generate_scenario(scenario)
    spec = data.spec
    if spec.tokens_per_frame != config.tokens_per_frame or spec.t_frames != config.clip_size:
        raise InvalidArgument("scenario frame geometry does not match the pipeline config")
    if backend is None:
        backend = MockBackend(_traced_model(model, spec, config))

    state = StreamState.fresh(config, keep_outputs)
    queries = _event_queries(data)
    concepts = np.stack([ev.concept for ev in data.events]) if data.events else None
    retained_best = np.full((len(queries), spec.n_clips), -np.inf)
    visual_sims: list[float] = []
    planted = recovered = 0
    clip_records = []

    for clip in data.clips():
        before = state.metrics.clips_processed
        for f in range(spec.t_frames):
            rows = slice(f * spec.tokens_per_frame, (f + 1) * spec.tokens_per_frame)
            process_frame(state, clip.embeddings[rows], config, backend)
        if state.metrics.clips_processed == before:
            continue
        log = state.log[-1]
        hits = n_ev = 0
        for ev in data.events_in(clip.clip_id):
            n_ev += len(ev.indices)
            hits += int(np.isin(ev.indices, log.selected).sum())
        planted += n_ev
        recovered += hits
        if concepts is not None:
            kept = state.last_selected.embeddings
            kept_unit = kept / np.maximum(np.linalg.norm(kept, axis=1, keepdims=True), 1e-300)
            retained_best[:, clip.clip_id] = (kept_unit @ concepts.T).max(axis=0)
            visual_sims.extend(cosine_many(concepts, clip.embeddings.mean(axis=0)).tolist())
        rec = {"clip_id": log.clip_id, "n_memory": log.n_memory, "n_visual": log.n_visual,
               "n_selected": int(len(log.selected)), "planted": n_ev, "recovered": hits}
        if timings:
            rec["seconds"] = log.seconds
        clip_records.append(rec)

    m = state.metrics
    query_records = []
    caption_sims: list[float] = []
    if data.events:
        m.selection_recall = recovered / planted
        found = retained_hits = 0
        threshold = RETAINED_SIGMAS / np.sqrt(spec.dim)
        for qi, (ev, q) in enumerate(zip(data.events, queries)):
            result, _ = answer_query(state, q, config)
            top = result.clip_ids[: config.recall_k]
            found += int(ev.clip_id in top)
            best = int(np.argmax(retained_best[qi]))
            retained_hits += bool(best == ev.clip_id and retained_best[qi, best] >= threshold)
            caption_sims.extend(caption_similarity(q, c, config.similarity) for c in state.captions)
            query_records.append({"event_clip": ev.clip_id, "ranked": [[c, s] for c, s in result.ranked],
                                  "tokens_used": result.tokens_used})
        m.retrieval_recall_at_k = found / len(queries)
        m.retained_recall = retained_hits / len(queries)

    report = {
        "mode": "streaming",
        "config": config.to_dict(),
        "budget": config.budget_summary(),
        "model": _model_dict(backend),
        "scenario": asdict(spec),
        "events": [{"clip_id": ev.clip_id, "n_tokens": int(len(ev.indices))} for ev in data.events],
        "clips": clip_records,
        "queries": query_records,
        "similarity_spread": {"caption_query": _spread(caption_sims), "visual_query": _spread(visual_sims)},
        "metrics": m.to_dict(timings),
    }
    return SimulationResult(m, report, state)


def _traced_model(model: MockModelConfig | None, spec: SyntheticScenario, config: PipelineConfig) -> MockModelConfig:
    model = model or MockModelConfig(dim=spec.dim)
    return MockModelConfig(**{**asdict(model), "trace_layers": tuple(sorted(set(config.layer_subset)))})


def _model_dict(backend) -> dict | None:
    cfg = getattr(backend, "config", None)
    if cfg is None:
        return None
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}


def run_global_uniform(
    scenario: SyntheticScenario | ScenarioData,
    config: PipelineConfig,
    model: MockModelConfig | None = None,
) -> SimulationResult:
    """Offline baseline: pick ``window // tokens_per_frame`` frames spread over the
    whole stream and caption them in a single pass. No recurrency; needs the
    full video up front."""
    data = scenario if isinstance(scenario, ScenarioData) else generate_scenario(scenario)
    spec = data.spec
    n_frames = spec.n_clips * spec.t_frames
    n_pick = min(config.window // spec.tokens_per_frame, n_frames)
    frames = np.floor((np.arange(n_pick) + 0.5) * n_frames / n_pick).astype(np.int64)
    npf = spec.tokens_per_frame
    rows, token_ids = [], []
    for cid in sorted(set(int(f) // spec.t_frames for f in frames)):
        clip = data.clip(cid)
        for f in frames[frames // spec.t_frames == cid]:
            local = int(f) % spec.t_frames
            rows.append(clip.embeddings[local * npf:(local + 1) * npf])
            token_ids.append(cid * spec.clip_tokens + local * npf + np.arange(npf))
    emb = np.concatenate(rows)
    picked = np.concatenate(token_ids)
    video = ClipTokens(0, n_pick, npf, emb)
    backend = MockBackend(_traced_model(model, spec, config))
    layout = TokenLayout(0, len(emb), backend.n_instruction, backend.n_caption)
    ctx = ContextAssembly(np.empty((0, spec.dim)), np.empty((0, 2), dtype=np.int64), video, layout)
    out = backend.process_clip(ctx)
    m = RunMetrics(clips_processed=1, frames_in=n_frames, context_utilization=len(emb) / config.window)
    if data.events:
        planted = sum(len(ev.indices) for ev in data.events)
        hit = sum(int(np.isin(ev.clip_id * spec.clip_tokens + ev.indices, picked).sum()) for ev in data.events)
        m.selection_recall = hit / planted
    report = {
        "mode": "global_uniform",
        "offline": True,
        "config": config.to_dict(),
        "scenario": asdict(spec),
        "frames": frames.tolist(),
        "model": _model_dict(backend),
        "caption": out.caption.text,
        "metrics": m.to_dict(),
    }
    state = StreamState.fresh(config, keep_outputs=True)
    state.captions.append(out.caption)
    state.outputs.append(out)
    return SimulationResult(m, report, state)
