"""Long-term caption memory and query-time retrieval.

Relevance between a query and a caption is the cosine of their mean-pooled
token embeddings (``Similarity.POOLED``), or the mean of all token-pair
cosines (``Similarity.PAIRWISE``). Retrieval diversifies with maximal
marginal relevance and can fill a token budget greedily.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import EmptyStore, InvalidArgument, InvalidDimension
from .numerics import Rng, cosine_many

DEFAULT_LAMBDA = 0.5
DEFAULT_BUDGET = 10_000


class Similarity(enum.Enum):
    POOLED = "pooled"
    PAIRWISE = "pairwise"


def _token_matrix(rows) -> np.ndarray:
    m = np.asarray(rows, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidDimension(f"token embeddings must be (n>=1, dim), got {m.shape}")
    return m


def _unit_mean(m: np.ndarray) -> np.ndarray:
    norms = np.sqrt((m * m).sum(axis=1, keepdims=True))
    return (m / np.where(norms == 0.0, 1.0, norms)).mean(axis=0)


@dataclass
class CaptionRecord:
    clip_id: int
    token_embeddings: np.ndarray
    text: str = ""
    pooled: np.ndarray = field(init=False, repr=False)
    unit_mean: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.token_embeddings = _token_matrix(self.token_embeddings)
        self.pooled = self.token_embeddings.mean(axis=0)
        self.unit_mean = _unit_mean(self.token_embeddings)

    @property
    def token_count(self) -> int:
        return self.token_embeddings.shape[0]

    def vector(self, mode: Similarity) -> np.ndarray:
        return self.pooled if mode is Similarity.POOLED else self.unit_mean


@dataclass
class QueryEmbedding:
    token_embeddings: np.ndarray
    pooled: np.ndarray = field(init=False, repr=False)
    unit_mean: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.token_embeddings = _token_matrix(self.token_embeddings)
        self.pooled = self.token_embeddings.mean(axis=0)
        self.unit_mean = _unit_mean(self.token_embeddings)

    @property
    def token_count(self) -> int:
        return self.token_embeddings.shape[0]

    def vector(self, mode: Similarity) -> np.ndarray:
        return self.pooled if mode is Similarity.POOLED else self.unit_mean


@dataclass
class RetrievalResult:
    ranked: list[tuple[int, float]]
    tokens_used: int
    budget: int | None = None

    @property
    def clip_ids(self) -> list[int]:
        return [cid for cid, _ in self.ranked]


def _similarities(query_vec: np.ndarray, rows: np.ndarray, mode: Similarity) -> np.ndarray:
    if mode is Similarity.POOLED:
        return cosine_many(rows, query_vec)
    # mean pairwise cosine == dot of the unit-token means
    if rows.shape[1] != query_vec.shape[0]:
        raise InvalidDimension(f"cannot compare shapes {rows.shape} and {query_vec.shape}")
    return (rows * query_vec).sum(axis=1)


def caption_similarity(
    query: QueryEmbedding, caption: CaptionRecord, mode: Similarity = Similarity.POOLED
) -> float:
    return float(_similarities(query.vector(mode), caption.vector(mode)[None, :], mode)[0])


def _sorted_store(store: Sequence[CaptionRecord]) -> list[CaptionRecord]:
    if not store:
        raise EmptyStore("caption store is empty")
    ordered = sorted(store, key=lambda r: r.clip_id)
    ids = [r.clip_id for r in ordered]
    if len(set(ids)) != len(ids):
        raise InvalidArgument("caption store has duplicate clip ids")
    return ordered


def _mmr_order(
    query: QueryEmbedding, store: Sequence[CaptionRecord], lam: float, mode: Similarity
) -> Iterator[tuple[CaptionRecord, float]]:
    """Yield captions in MMR pick order with their query relevance."""
    if not 0.0 <= lam <= 1.0:
        raise InvalidArgument(f"lambda must be in [0, 1], got {lam}")
    ordered = _sorted_store(store)
    vecs = np.stack([r.vector(mode) for r in ordered])
    rel = _similarities(query.vector(mode), vecs, mode)
    available = np.ones(len(ordered), dtype=bool)
    max_sim = np.full(len(ordered), -np.inf)
    for step in range(len(ordered)):
        if step == 0:
            score = rel.copy()
        else:
            score = lam * rel - (1.0 - lam) * max_sim
        score[~available] = -np.inf
        # argmax takes the first maximum, i.e. the smallest clip id on ties
        best = int(np.argmax(score))
        available[best] = False
        max_sim = np.maximum(max_sim, _similarities(vecs[best], vecs, mode))
        yield ordered[best], float(rel[best])


def mmr_retrieve(
    query: QueryEmbedding,
    store: Sequence[CaptionRecord],
    k: int,
    lam: float = DEFAULT_LAMBDA,
    mode: Similarity = Similarity.POOLED,
) -> RetrievalResult:
    if not store:
        raise EmptyStore("caption store is empty")
    if not 1 <= k <= len(store):
        raise InvalidArgument(f"k must be in [1, {len(store)}], got {k}")
    ranked, used = [], 0
    for rec, rel in _mmr_order(query, store, lam, mode):
        ranked.append((rec.clip_id, rel))
        used += rec.token_count
        if len(ranked) == k:
            break
    return RetrievalResult(ranked, used, None)


def budgeted_retrieve(
    query: QueryEmbedding,
    store: Sequence[CaptionRecord],
    lam: float = DEFAULT_LAMBDA,
    budget_tokens: int = DEFAULT_BUDGET,
    reserve: int | None = None,
    k: int | None = None,
    mode: Similarity = Similarity.POOLED,
) -> RetrievalResult:
    """Greedy MMR that stops at the first caption that would overflow the budget.

    ``reserve`` tokens are held back for the query itself (default: its token
    count). ``k`` optionally caps the number of captions.
    """
    if budget_tokens <= 0:
        raise InvalidArgument("budget must be positive")
    if reserve is None:
        reserve = query.token_count
    limit = budget_tokens - reserve
    ranked, used = [], 0
    for rec, rel in _mmr_order(query, store, lam, mode):
        if k is not None and len(ranked) >= k:
            break
        if used + rec.token_count > limit:
            break
        ranked.append((rec.clip_id, rel))
        used += rec.token_count
    return RetrievalResult(ranked, used, budget_tokens)


def baseline_retrieve_random(store: Sequence[CaptionRecord], k: int, rng: Rng) -> RetrievalResult:
    ordered = _sorted_store(store)
    if not 1 <= k <= len(ordered):
        raise InvalidArgument(f"k must be in [1, {len(ordered)}], got {k}")
    picks = [ordered[i] for i in rng.sample(len(ordered), k)]
    return RetrievalResult([(r.clip_id, 0.0) for r in picks], sum(r.token_count for r in picks))


def baseline_retrieve_visual(
    query_visual, visual_index: Mapping[int, np.ndarray], k: int
) -> RetrievalResult:
    """Top-k clips by cosine between the query and each clip's pooled visual tokens."""
    if not visual_index:
        raise EmptyStore("visual index is empty")
    if not 1 <= k <= len(visual_index):
        raise InvalidArgument(f"k must be in [1, {len(visual_index)}], got {k}")
    ids = sorted(visual_index)
    sims = cosine_many(np.stack([visual_index[i] for i in ids]), np.asarray(query_visual, dtype=np.float64))
    order = np.argsort(-sims, kind="stable")[:k]
    return RetrievalResult([(ids[i], float(sims[i])) for i in order], 0)
