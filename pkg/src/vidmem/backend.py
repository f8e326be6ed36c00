"""Model backends and the synthetic planted-event scenario.

``MockBackend`` stands in for a video LLM. It runs a small causal decoder
over ``[memory | visual | instruction | caption]`` where only the caption
positions carry an evolving hidden state:

* caption states start from the normalised mean of the current clip plus a
  seed-derived caption vector;
* each layer applies a fixed random rotation split into heads and takes
  scaled dot-product attention from caption rows over every earlier
  position; the attention output (identity values) is added back into the
  caption state.

Caption embeddings are the attention-weighted means of the current clip's
visual tokens over the traced layers and heads. Traces and captions are
rounded to float32 so that a written trace replays bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Protocol, Sequence

import numpy as np

from .errors import InvalidArgument, InvalidDimension
from .memory import ContextAssembly
from .numerics import Rng
from .retrieval import CaptionRecord
from .scoring import AttentionTrace, TokenLayout
from .selection import ClipTokens

# the captioning instruction, stood in for by a fixed block of 8 tokens
INSTRUCTION_TOKENS = 8


@dataclass(frozen=True)
class BackendOutput:
    caption: CaptionRecord
    trace: AttentionTrace


class Backend(Protocol):
    n_instruction: int
    n_caption: int

    def process_clip(self, ctx: ContextAssembly) -> BackendOutput: ...


@dataclass(frozen=True)
class MockModelConfig:
    dim: int = 64
    n_layers: int = 28
    n_heads: int = 4
    head_dim: int = 16
    caption_len: int = 16
    seed: int = 0
    # layers whose attention is materialised; None means every layer
    trace_layers: tuple[int, ...] | None = None
    query_gain: float = 24.0
    seed_mix: float = 0.5

    def __post_init__(self):
        if min(self.dim, self.n_layers, self.n_heads, self.head_dim, self.caption_len) < 1:
            raise InvalidArgument("mock model counts must be >= 1")
        if self.dim != self.n_heads * self.head_dim:
            raise InvalidArgument(f"dim {self.dim} != n_heads * head_dim = {self.n_heads * self.head_dim}")
        if self.trace_layers is not None:
            if not self.trace_layers or any(not 0 <= l < self.n_layers for l in self.trace_layers):
                raise InvalidArgument(f"trace layers {self.trace_layers} outside 0..{self.n_layers - 1}")

    @property
    def traced(self) -> tuple[int, ...]:
        if self.trace_layers is None:
            return tuple(range(self.n_layers))
        return tuple(sorted(set(self.trace_layers)))


def _f32(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32).astype(np.float64)


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(m, axis=-1, keepdims=True)
    return m / np.where(n == 0.0, 1.0, n)


class MockBackend:
    def __init__(self, config: MockModelConfig):
        self.config = config
        self.n_instruction = INSTRUCTION_TOKENS
        self.n_caption = config.caption_len
        rng = Rng(config.seed)
        d, dk = config.dim, config.head_dim
        wrng = rng.fork(1)
        # per layer and head: R_h R_h^T, the bilinear form of one head's rotated subspace
        self._head_forms = []
        for _ in range(config.n_layers):
            q, r = np.linalg.qr(wrng.normal((d, d)))
            q = q * np.sign(np.diag(r))
            self._head_forms.append(
                np.stack([q[:, h * dk:(h + 1) * dk] @ q[:, h * dk:(h + 1) * dk].T for h in range(config.n_heads)])
            )
        self.caption_seeds = rng.fork(2).unit_vectors(config.caption_len, d)
        self.instruction = rng.fork(3).unit_vectors(INSTRUCTION_TOKENS, d)

    def _check(self, ctx: ContextAssembly) -> None:
        cfg = self.config
        if ctx.clip.dim != cfg.dim or (ctx.memory_tokens.size and ctx.memory_tokens.shape[1] != cfg.dim):
            raise InvalidDimension(f"context dim {ctx.clip.dim} does not match model dim {cfg.dim}")

    def _layers(self, ctx: ContextAssembly, last: int) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        """Run layers ``0..last``; yield ``(layer, prefix_probs, caption_probs)``.

        Shapes are (heads, caption, prefix) and (heads, caption, caption). The
        arrays are reused by the next layer, so consumers must copy what they keep.
        """
        cfg = self.config
        clip = ctx.clip
        n_cap, n_heads = cfg.caption_len, cfg.n_heads
        prefix = np.concatenate([ctx.memory_tokens.reshape(-1, cfg.dim), clip.embeddings, self.instruction])
        n_pre = prefix.shape[0]
        summary = clip.embeddings.mean(axis=0)
        h = _normalize_rows(_normalize_rows(summary[None, :]) + cfg.seed_mix * self.caption_seeds)
        causal = np.triu(np.ones((n_cap, n_cap), dtype=bool), k=1)
        scale = cfg.query_gain / np.sqrt(cfg.head_dim)
        for layer in range(last + 1):
            q = np.einsum("cd,hde->hce", h, self._head_forms[layer]) * scale
            # prefix and caption columns are kept apart to avoid re-concatenating keys
            a_pre = (q.reshape(n_heads * n_cap, -1) @ prefix.T).reshape(n_heads, n_cap, n_pre)
            a_cap = q @ h.T
            a_cap[:, causal] = -np.inf
            top = np.maximum(a_pre.max(axis=-1), a_cap.max(axis=-1))[..., None]
            np.subtract(a_pre, top, out=a_pre)
            np.exp(a_pre, out=a_pre)
            a_cap = np.exp(a_cap - top)
            denom = a_pre.sum(axis=-1, keepdims=True) + a_cap.sum(axis=-1, keepdims=True)
            a_pre /= denom
            a_cap /= denom
            yield layer, a_pre, a_cap
            mixed = (a_pre.reshape(n_heads * n_cap, n_pre) @ prefix).reshape(n_heads, n_cap, -1)
            h = _normalize_rows(h + (mixed + a_cap @ h).mean(axis=0))

    def full_attention(self, ctx: ContextAssembly, layer: int) -> np.ndarray:
        """Caption-row attention of one layer over the whole causal sequence,
        shape (heads, caption, n_total). Float64, for inspection and tests."""
        self._check(ctx)
        if not 0 <= layer < self.config.n_layers:
            raise InvalidArgument(f"layer {layer} outside 0..{self.config.n_layers - 1}")
        for l, a_pre, a_cap in self._layers(ctx, layer):
            if l == layer:
                return np.concatenate([a_pre, a_cap], axis=-1)
        raise AssertionError("unreachable")

    def process_clip(self, ctx: ContextAssembly) -> BackendOutput:
        self._check(ctx)
        cfg = self.config
        clip = ctx.clip
        n_mem, n_vis, n_cap = ctx.layout.n_memory, clip.n_tokens, cfg.caption_len
        vis = slice(n_mem, n_mem + n_vis)
        traced = cfg.traced
        wanted = set(traced)
        blocks: dict[tuple[int, int], np.ndarray] = {}
        weight = np.zeros((n_cap, n_vis))
        for layer, a_pre, _ in self._layers(ctx, max(traced)):
            if layer in wanted:
                block = _f32(a_pre[:, :, vis])
                for head in range(cfg.n_heads):
                    blocks[(layer, head)] = block[head]
                weight += block.sum(axis=0)

        trace = AttentionTrace(
            clip_id=clip.clip_id,
            n_layers=cfg.n_layers,
            n_heads=cfg.n_heads,
            layout=TokenLayout(n_mem, n_vis, INSTRUCTION_TOKENS, n_cap),
            blocks=blocks,
            layers=traced,
            validate=False,
        )
        emb = _f32(weight @ clip.embeddings / weight.sum(axis=1, keepdims=True))
        text = f"clip {clip.clip_id}: caption of {n_vis} visual tokens with {n_mem} memory tokens"
        return BackendOutput(CaptionRecord(clip.clip_id, emb, text), trace)


class ReplayBackend:
    """Serves recorded outputs (e.g. real-model trace dumps) by clip id."""

    def __init__(self, outputs: Sequence[BackendOutput]):
        self._outputs = {o.trace.clip_id: o for o in outputs}
        first = next(iter(self._outputs.values()), None)
        self.n_instruction = first.trace.layout.n_instruction if first else 0
        self.n_caption = first.trace.layout.n_caption if first else 0

    def process_clip(self, ctx: ContextAssembly) -> BackendOutput:
        cid = ctx.clip.clip_id
        if cid not in self._outputs:
            raise InvalidArgument(f"no recorded output for clip {cid}")
        out = self._outputs[cid]
        if out.trace.layout.n_visual != ctx.clip.n_tokens:
            raise InvalidDimension(
                f"recorded clip {cid} has {out.trace.layout.n_visual} visual tokens, context has {ctx.clip.n_tokens}"
            )
        return out


# ---------------------------------------------------------------------------
# planted-event scenarios


@dataclass(frozen=True)
class Event:
    clip_id: int
    indices: np.ndarray
    concept: np.ndarray


@dataclass(frozen=True)
class SyntheticScenario:
    n_clips: int = 8
    t_frames: int = 16
    tokens_per_frame: int = 196
    dim: int = 64
    n_events: int = 2
    event_tokens: int = 32
    noise_scale: float = 0.1
    event_noise: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.n_clips, self.t_frames, self.tokens_per_frame, self.dim) < 1:
            raise InvalidArgument("scenario counts must be >= 1")
        if not 0 <= self.n_events <= self.n_clips:
            raise InvalidArgument(f"n_events must be in [0, n_clips={self.n_clips}]")
        if not 0 <= self.event_tokens <= self.clip_tokens:
            raise InvalidArgument(f"event_tokens must be in [0, {self.clip_tokens}]")
        if self.n_events and self.event_tokens == 0:
            raise InvalidArgument("events need at least one token")
        if self.noise_scale < 0 or self.event_noise < 0:
            raise InvalidArgument("noise scales must be >= 0")

    @property
    def clip_tokens(self) -> int:
        return self.t_frames * self.tokens_per_frame


@dataclass
class ScenarioData:
    spec: SyntheticScenario
    events: list[Event]
    _by_clip: dict[int, list[Event]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for ev in self.events:
            self._by_clip.setdefault(ev.clip_id, []).append(ev)

    def clip(self, clip_id: int) -> ClipTokens:
        s = self.spec
        if not 0 <= clip_id < s.n_clips:
            raise InvalidArgument(f"clip {clip_id} outside 0..{s.n_clips - 1}")
        rng = Rng(s.seed).fork(1, clip_id)
        x = rng.normal((s.clip_tokens, s.dim)) * s.noise_scale
        for ev in self._by_clip.get(clip_id, ()):
            x[ev.indices] = ev.concept + s.event_noise * rng.normal((len(ev.indices), s.dim))
        return ClipTokens(clip_id, s.t_frames, s.tokens_per_frame, x, clip_id * s.clip_tokens)

    def clips(self) -> Iterator[ClipTokens]:
        for i in range(self.spec.n_clips):
            yield self.clip(i)

    def events_in(self, clip_id: int) -> list[Event]:
        return self._by_clip.get(clip_id, [])


def generate_scenario(spec: SyntheticScenario) -> ScenarioData:
    """Place ``n_events`` events in distinct clips; clips are generated lazily per id."""
    rng = Rng(spec.seed).fork(0)
    clip_ids = sorted(rng.sample(spec.n_clips, spec.n_events))
    events = []
    for cid in clip_ids:
        idx = np.array(sorted(rng.sample(spec.clip_tokens, spec.event_tokens)), dtype=np.int64)
        concept = rng.unit_vectors(1, spec.dim)[0]
        events.append(Event(cid, idx, concept))
    return ScenarioData(spec, events)
