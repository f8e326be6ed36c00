"""Compress a clip's visual tokens into a small ordered subset.

All strategies return a :class:`SelectedTokenSet` whose indices are strictly
increasing, so retained tokens stay in temporal order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, InvalidDimension
from .numerics import Rng
from .scoring import ScoreVector

KMEANS_MAX_ITER = 25
KMEANS_TOL = 1e-4


@dataclass(frozen=True)
class ClipTokens:
    clip_id: int
    t_frames: int
    tokens_per_frame: int
    embeddings: np.ndarray  # (t_frames * tokens_per_frame, dim), frame-major
    global_offset: int = 0

    def __post_init__(self):
        emb = self.embeddings
        if emb.ndim != 2 or emb.shape[0] != self.t_frames * self.tokens_per_frame:
            raise InvalidDimension(
                f"clip {self.clip_id}: expected {self.t_frames * self.tokens_per_frame} "
                f"token rows, got shape {emb.shape}"
            )

    @property
    def n_tokens(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class SelectedTokenSet:
    clip_id: int
    indices: np.ndarray  # int64, strictly increasing local indices
    embeddings: np.ndarray

    @property
    def n_select(self) -> int:
        return len(self.indices)


def _check_n(n_select: int, count: int) -> None:
    if not 1 <= n_select <= count:
        raise InvalidArgument(f"n_select must be in [1, {count}], got {n_select}")


def topk_indices(scores, n_select: int) -> np.ndarray:
    """Ascending indices of the ``n_select`` highest scores (ties favour lower index)."""
    s = np.asarray(scores, dtype=np.float64)
    _check_n(n_select, len(s))
    order = np.argsort(-s, kind="stable")
    return np.sort(order[:n_select])


def select_attention_topk(clip: ClipTokens, scores: ScoreVector, n_select: int) -> SelectedTokenSet:
    if len(scores.scores) != clip.n_tokens:
        raise InvalidDimension(f"{len(scores.scores)} scores for {clip.n_tokens} tokens")
    idx = topk_indices(scores.scores, n_select)
    return SelectedTokenSet(clip.clip_id, idx, clip.embeddings[idx].copy())


def uniform_indices(count: int, n_select: int) -> np.ndarray:
    _check_n(n_select, count)
    stride = count / n_select
    return np.floor((np.arange(n_select) + 0.5) * stride).astype(np.int64)


def select_uniform(clip: ClipTokens, n_select: int) -> SelectedTokenSet:
    idx = uniform_indices(clip.n_tokens, n_select)
    return SelectedTokenSet(clip.clip_id, idx, clip.embeddings[idx].copy())


def mean_pool(clip: ClipTokens, n_select: int) -> SelectedTokenSet:
    """Average contiguous chunks; each chunk is indexed by its first token."""
    count = clip.n_tokens
    _check_n(n_select, count)
    chunks = np.array_split(np.arange(count), n_select)
    starts = np.array([c[0] for c in chunks], dtype=np.int64)
    pooled = np.stack([clip.embeddings[c].mean(axis=0) for c in chunks])
    return SelectedTokenSet(clip.clip_id, starts, pooled)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] - 2.0 * x @ c.T + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(x: np.ndarray, k: int, rng: Rng) -> np.ndarray:
    n = len(x)
    chosen = [rng.below(n)]
    d2 = _sq_dists(x, x[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # only duplicates remain: take the first unchosen point
            taken = set(chosen)
            nxt = next(i for i in range(n) if i not in taken)
        else:
            cdf = np.cumsum(d2)
            nxt = int(np.searchsorted(cdf, rng.next_f64() * cdf[-1], side="right"))
            nxt = min(nxt, n - 1)
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(x, x[nxt][None, :])[:, 0])
    return x[chosen].copy()


def kmeans_select(clip: ClipTokens, n_select: int, rng: Rng) -> SelectedTokenSet:
    """Lloyd's k-means with k-means++ seeding; returns the real token nearest each centroid."""
    x = clip.embeddings
    n = len(x)
    _check_n(n_select, n)
    centroids = _kmeanspp(x, n_select, rng)
    for _ in range(KMEANS_MAX_ITER):
        labels = _sq_dists(x, centroids).argmin(axis=1)
        updated = centroids.copy()
        for j in range(n_select):
            members = labels == j
            if members.any():
                updated[j] = x[members].mean(axis=0)
        shift = np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max()
        centroids = updated
        if shift < KMEANS_TOL:
            break

    d = _sq_dists(x, centroids)
    taken: set[int] = set()
    picks = []
    for j in range(n_select):
        for i in np.argsort(d[:, j], kind="stable"):
            if int(i) not in taken:
                taken.add(int(i))
                picks.append(int(i))
                break
    idx = np.array(sorted(picks), dtype=np.int64)
    return SelectedTokenSet(clip.clip_id, idx, x[idx].copy())
