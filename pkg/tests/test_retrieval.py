import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidmem.errors import DegenerateVector, EmptyStore, InvalidArgument, InvalidDimension
from vidmem.numerics import Rng
from vidmem.retrieval import (
    CaptionRecord,
    QueryEmbedding,
    Similarity,
    baseline_retrieve_random,
    baseline_retrieve_visual,
    budgeted_retrieve,
    caption_similarity,
    mmr_retrieve,
)


def random_store(rng, n, dim=8, tokens=(1, 6)):
    return [CaptionRecord(i, rng.normal(size=(int(rng.integers(*tokens)), dim))) for i in range(n)]


def similarity_order(query, store, mode=Similarity.POOLED):
    sims = [(caption_similarity(query, c, mode), c.clip_id) for c in store]
    return [cid for _, cid in sorted(sims, key=lambda p: (-p[0], p[1]))]


# Five unit captions with exact rational cosines. Relevance to e3 is
# (0, 3/5, 4/5, 3/5, 0); working the recurrence by hand with lambda = 1/2:
#   pick 2 (relevance 4/5)
#   scores: c0 0, c1 3/10 - 12/50 = 3/50, c3 3/10 - 24/50, c4 -12/50  -> pick 1
#   scores: c0 -2/5, c3 -9/50, c4 -6/25                               -> pick 3
#   scores: c0 -2/5, c4 -8/25                                         -> pick 4, then 0
HAND_VECTORS = [[1, 0, 0], [0.8, 0, 0.6], [0, 0.6, 0.8], [0, 0.8, 0.6], [0.6, 0.8, 0]]
HAND_ORDER = [2, 1, 3, 4, 0]


class TestSimilarity:
    def test_identical(self):
        v = np.array([[0.2, 0.5, -1.0]])
        assert caption_similarity(QueryEmbedding(v), CaptionRecord(0, v)) == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        assert caption_similarity(QueryEmbedding([[1.0, 0.0]]), CaptionRecord(0, [[0.0, 2.0]])) == 0.0

    def test_argmax_matches_pooled_scan(self):
        rng = np.random.default_rng(1)
        store = random_store(rng, 20)
        q = QueryEmbedding(rng.normal(size=(3, 8)))
        qv = q.token_embeddings.mean(axis=0)
        scan = [float(qv @ c.token_embeddings.mean(axis=0))
                / (np.linalg.norm(qv) * np.linalg.norm(c.token_embeddings.mean(axis=0))) for c in store]
        assert mmr_retrieve(q, store, 1).clip_ids == [int(np.argmax(scan))]

    def test_pairwise_mode_is_mean_of_pairwise_cosines(self):
        rng = np.random.default_rng(2)
        q, c = rng.normal(size=(3, 5)), rng.normal(size=(4, 5))
        pair = np.mean([a @ b / (np.linalg.norm(a) * np.linalg.norm(b)) for a in q for b in c])
        got = caption_similarity(QueryEmbedding(q), CaptionRecord(0, c), Similarity.PAIRWISE)
        assert got == pytest.approx(pair, abs=1e-12)

    def test_errors(self):
        with pytest.raises(InvalidDimension):
            caption_similarity(QueryEmbedding([[1.0, 0.0]]), CaptionRecord(0, [[1.0, 0.0, 0.0]]))
        with pytest.raises(DegenerateVector):
            caption_similarity(QueryEmbedding([[1.0, 0.0]]), CaptionRecord(0, [[1.0, 0.0], [-1.0, 0.0]]))


class TestMMR:
    def test_hand_trace(self):
        store = [CaptionRecord(i, [v]) for i, v in enumerate(HAND_VECTORS)]
        result = mmr_retrieve(QueryEmbedding([[0, 0, 1]]), store, 5, lam=0.5)
        assert result.clip_ids == HAND_ORDER
        assert similarity_order(QueryEmbedding([[0, 0, 1]]), store) == [2, 1, 3, 0, 4]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 25))
    def test_lambda_one_is_similarity_sort(self, seed, n):
        rng = np.random.default_rng(seed)
        store = random_store(rng, n)
        q = QueryEmbedding(rng.normal(size=(2, 8)))
        k = int(rng.integers(1, n + 1))
        assert mmr_retrieve(q, store, k, lam=1.0).clip_ids == similarity_order(q, store)[:k]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 1))
    def test_first_pick_is_relevance_argmax(self, seed, lam):
        rng = np.random.default_rng(seed)
        store = random_store(rng, 12)
        q = QueryEmbedding(rng.normal(size=(2, 8)))
        assert mmr_retrieve(q, store, 1, lam=lam).clip_ids[0] == similarity_order(q, store)[0]
        assert mmr_retrieve(q, store, 4, lam=lam).clip_ids[0] == similarity_order(q, store)[0]

    def test_ties_go_to_smaller_clip_id(self):
        store = [CaptionRecord(i, [[1.0, 0.0]]) for i in (4, 2, 9)]
        assert mmr_retrieve(QueryEmbedding([[1.0, 0.0]]), store, 3, lam=1.0).clip_ids == [2, 4, 9]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_insertion_order_independent(self, seed):
        rng = np.random.default_rng(seed)
        store = random_store(rng, 10)
        q = QueryEmbedding(rng.normal(size=(1, 8)))
        shuffled = [store[i] for i in rng.permutation(10)]
        assert mmr_retrieve(q, store, 10).ranked == mmr_retrieve(q, shuffled, 10).ranked

    def test_errors(self):
        q = QueryEmbedding([[1.0, 0.0]])
        with pytest.raises(EmptyStore):
            mmr_retrieve(q, [], 1)
        store = [CaptionRecord(0, [[1.0, 0.0]])]
        with pytest.raises(InvalidArgument):
            mmr_retrieve(q, store, 2)
        with pytest.raises(InvalidArgument):
            mmr_retrieve(q, store, 1, lam=1.5)
        with pytest.raises(InvalidArgument):
            mmr_retrieve(q, store + [CaptionRecord(0, [[0.0, 1.0]])], 1)


class TestBudget:
    def test_uniform_captions(self):
        rng = np.random.default_rng(3)
        store = [CaptionRecord(i, rng.normal(size=(500, 4))) for i in range(30)]
        r = budgeted_retrieve(QueryEmbedding(rng.normal(size=(1, 4))), store, budget_tokens=10_000, reserve=0)
        assert len(r.ranked) == 20 and r.tokens_used == 10_000

    def test_budget_below_smallest_caption(self):
        store = [CaptionRecord(i, np.ones((5, 2)) * (i + 1)) for i in range(3)]
        r = budgeted_retrieve(QueryEmbedding([[1.0, 1.0]]), store, budget_tokens=4, reserve=0)
        assert r.ranked == [] and r.tokens_used == 0

    def test_reserve_defaults_to_query_tokens(self):
        store = [CaptionRecord(i, np.eye(2)[[i % 2]] + 0.1 * i) for i in range(4)]
        q = QueryEmbedding(np.ones((3, 2)))
        assert budgeted_retrieve(q, store, budget_tokens=5).tokens_used == 2
        assert budgeted_retrieve(q, store, budget_tokens=5, reserve=0).tokens_used == 4

    def test_fixed_k_cap(self):
        rng = np.random.default_rng(4)
        store = random_store(rng, 10)
        q = QueryEmbedding(rng.normal(size=(1, 8)))
        full = budgeted_retrieve(q, store, budget_tokens=10_000)
        assert budgeted_retrieve(q, store, budget_tokens=10_000, k=3).ranked == full.ranked[:3]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 200), st.integers(0, 20))
    def test_never_over_budget(self, seed, budget, reserve):
        rng = np.random.default_rng(seed)
        store = random_store(rng, int(rng.integers(1, 30)), tokens=(1, 40))
        r = budgeted_retrieve(QueryEmbedding(rng.normal(size=(2, 8))), store, budget_tokens=budget, reserve=reserve)
        assert r.tokens_used + reserve <= budget or r.tokens_used == 0
        assert r.tokens_used == sum(c.token_count for c in store if c.clip_id in r.clip_ids)


class TestBaselines:
    def test_random_reproducible_and_permutation(self):
        store = random_store(np.random.default_rng(0), 7)
        a = baseline_retrieve_random(store, 7, Rng(3))
        b = baseline_retrieve_random(store, 7, Rng(3))
        assert a.clip_ids == b.clip_ids and sorted(a.clip_ids) == list(range(7))

    def test_random_frequency_uniform(self):
        store = random_store(np.random.default_rng(0), 10)
        rng = Rng(11)
        counts = np.zeros(10)
        trials = 10_000
        for _ in range(trials):
            counts[baseline_retrieve_random(store, 1, rng).clip_ids[0]] += 1
        sigma = np.sqrt(trials * 0.1 * 0.9)
        assert np.all(np.abs(counts - trials * 0.1) <= 3 * sigma)

    def test_random_k_too_large(self):
        with pytest.raises(InvalidArgument):
            baseline_retrieve_random(random_store(np.random.default_rng(0), 3), 4, Rng(0))

    def test_visual_identical_ranks_first(self):
        rng = np.random.default_rng(5)
        index = {i: rng.normal(size=6) for i in range(8)}
        assert baseline_retrieve_visual(index[5], index, 1).clip_ids == [5]

    def test_visual_argmax(self):
        rng = np.random.default_rng(6)
        index = {i: rng.normal(size=6) for i in range(15)}
        q = rng.normal(size=6)
        sims = {i: v @ q / np.linalg.norm(v) / np.linalg.norm(q) for i, v in index.items()}
        assert baseline_retrieve_visual(q, index, 1).clip_ids == [max(sims, key=sims.get)]

    def test_visual_ties_by_clip_id(self):
        index = {3: np.array([1.0, 1.0, 0.0]), 1: np.array([2.0, -1.0, 0.0]), 2: np.array([0.0, 1.0, 0.0])}
        r = baseline_retrieve_visual(np.array([0.0, 0.0, 1.0]), index, 3)
        assert r.clip_ids == [1, 2, 3]
        assert all(score == 0.0 for _, score in r.ranked)
