import struct

import numpy as np
import pytest

from conftest import LIGHT_MODEL
from vidmem.backend import (
    INSTRUCTION_TOKENS,
    BackendOutput,
    MockBackend,
    MockModelConfig,
    ReplayBackend,
    SyntheticScenario,
    generate_scenario,
)
from vidmem.errors import InvalidArgument, InvalidDimension, TraceFormatError, UnsupportedVersion
from vidmem.memory import ContextBudget, ShortTermMemory, assemble_context
from vidmem.retrieval import CaptionRecord
from vidmem.scoring import compute_token_scores
from vidmem.selection import SelectedTokenSet, topk_indices
from vidmem.tracefile import decode_trace, encode_trace, read_trace, write_trace

SMALL = SyntheticScenario(n_clips=3, t_frames=2, tokens_per_frame=32, dim=16, n_events=1, event_tokens=6, seed=4)
SMALL_MODEL = MockModelConfig(dim=16, n_layers=3, n_heads=2, head_dim=8, caption_len=5, seed=1)


def context(data, clip_id, backend, memory=None):
    return assemble_context(memory or ShortTermMemory(4), data.clip(clip_id), ContextBudget(4096, 2048, 2048),
                            backend.n_instruction, backend.n_caption)


def memory_with(data, clip_ids, n=8):
    m = ShortTermMemory(4)
    for cid in clip_ids:
        c = data.clip(cid)
        m.push(SelectedTokenSet(cid, np.arange(n), c.embeddings[:n]))
    return m


class TestMockBackend:
    def test_deterministic(self):
        data = generate_scenario(SMALL)
        a = MockBackend(SMALL_MODEL).process_clip(context(data, 1, MockBackend(SMALL_MODEL)))
        b = MockBackend(SMALL_MODEL).process_clip(context(data, 1, MockBackend(SMALL_MODEL)))
        assert encode_trace([a]) == encode_trace([b])

    def test_seed_changes_output(self):
        data = generate_scenario(SMALL)
        other = MockModelConfig(**{**SMALL_MODEL.__dict__, "seed": 2})
        a = MockBackend(SMALL_MODEL).process_clip(context(data, 1, MockBackend(SMALL_MODEL)))
        b = MockBackend(other).process_clip(context(data, 1, MockBackend(other)))
        assert encode_trace([a]) != encode_trace([b])

    def test_shapes_and_row_sums(self):
        data = generate_scenario(SMALL)
        be = MockBackend(SMALL_MODEL)
        ctx = context(data, 2, be, memory_with(data, [0, 1]))
        out = be.process_clip(ctx)
        lay = out.trace.layout
        assert (lay.n_memory, lay.n_visual, lay.n_instruction, lay.n_caption) == (16, 64, INSTRUCTION_TOKENS, 5)
        assert out.caption.token_count == lay.n_caption
        out.trace.check()
        for block in out.trace.blocks.values():
            assert block.shape == (5, 64) and block.sum(axis=1).max() <= 1.0 + 1e-6

    def test_full_rows_are_causal_distributions(self):
        data = generate_scenario(SMALL)
        be = MockBackend(SMALL_MODEL)
        ctx = context(data, 2, be, memory_with(data, [0, 1]))
        n_pre = ctx.layout.n_total - ctx.layout.n_caption
        for layer in range(SMALL_MODEL.n_layers):
            full = be.full_attention(ctx, layer)
            assert full.shape == (2, 5, ctx.layout.n_total)
            np.testing.assert_allclose(full.sum(axis=-1), 1.0, atol=1e-9)
            for i in range(5):
                assert np.all(full[:, i, n_pre + i + 1:] == 0.0)
            out = be.process_clip(ctx)
            vis = slice(ctx.layout.n_memory, ctx.layout.n_memory + ctx.layout.n_visual)
            np.testing.assert_allclose(out.trace.blocks[(layer, 1)], full[1, :, vis], atol=1e-7)

    def test_caption_rows_ignore_later_caption_tokens(self):
        # causality through depth: changing caption seeds 1.. leaves row 0 untouched at every layer
        data = generate_scenario(SMALL)
        a, b = MockBackend(SMALL_MODEL), MockBackend(SMALL_MODEL)
        b.caption_seeds = b.caption_seeds.copy()
        b.caption_seeds[1:] = b.caption_seeds[1:][::-1] * -1.0
        for layer in range(SMALL_MODEL.n_layers):
            fa = a.full_attention(context(data, 0, a), layer)
            fb = b.full_attention(context(data, 0, b), layer)
            np.testing.assert_array_equal(fa[:, 0], fb[:, 0])
            assert not np.array_equal(fa[:, 1], fb[:, 1])

    def test_only_traced_layers_stored(self):
        cfg = MockModelConfig(**{**SMALL_MODEL.__dict__, "trace_layers": (2, 0)})
        data = generate_scenario(SMALL)
        out = MockBackend(cfg).process_clip(context(data, 0, MockBackend(cfg)))
        assert out.trace.layers == (0, 2)
        assert sorted(out.trace.blocks) == [(0, 0), (0, 1), (2, 0), (2, 1)]

    def test_dimension_mismatch(self):
        data = generate_scenario(SMALL)
        wide = MockModelConfig(dim=32, head_dim=16, n_heads=2, n_layers=2)
        be = MockBackend(wide)
        with pytest.raises(InvalidDimension):
            be.process_clip(context(data, 0, be))

    def test_config_invariants(self):
        with pytest.raises(InvalidArgument):
            MockModelConfig(dim=64, n_heads=3, head_dim=16)
        with pytest.raises(InvalidArgument):
            MockModelConfig(n_layers=4, trace_layers=(4,))

    def test_planted_tokens_get_top_attention(self):
        # one event clip per scenario, empty memory: the planted tokens should
        # all sit inside the 196 highest-scoring tokens
        be = MockBackend(LIGHT_MODEL)
        hits = 0
        for seed in range(100):
            data = generate_scenario(SyntheticScenario(n_clips=1, n_events=1, seed=seed))
            ev = data.events[0]
            out = be.process_clip(assemble_context(ShortTermMemory(16), data.clip(0), ContextBudget.even(6272),
                                                   be.n_instruction, be.n_caption))
            top = topk_indices(compute_token_scores(out.trace, [0, 1, 2, 3]).scores, 196)
            hits += bool(np.isin(ev.indices, top).all())
        assert hits >= 90


class TestScenario:
    def test_zero_events(self):
        data = generate_scenario(SyntheticScenario(n_clips=2, n_events=0, seed=1))
        assert data.events == []
        x = data.clip(0).embeddings
        assert abs(x.std() - 0.1) < 0.005

    def test_deterministic(self):
        a, b = generate_scenario(SMALL), generate_scenario(SMALL)
        for cid in range(SMALL.n_clips):
            assert a.clip(cid).embeddings.tobytes() == b.clip(cid).embeddings.tobytes()
        assert [e.indices.tolist() for e in a.events] == [e.indices.tolist() for e in b.events]

    def test_events_valid(self):
        data = generate_scenario(SyntheticScenario(n_clips=6, n_events=4, seed=2))
        assert len({e.clip_id for e in data.events}) == 4
        for e in data.events:
            assert len(set(e.indices.tolist())) == 32 and e.indices.max() < 3136
            assert np.linalg.norm(e.concept) == pytest.approx(1.0, abs=1e-12)

    def test_event_alignment_five_sigma(self):
        spec = SyntheticScenario(n_clips=4, n_events=2, seed=9)
        data = generate_scenario(spec)
        for ev in data.events:
            x = data.clip(ev.clip_id).embeddings
            cos = x @ ev.concept / np.linalg.norm(x, axis=1)
            background = np.delete(cos, ev.indices)
            assert cos[ev.indices].mean() > background.mean() + 5 * background.std()

    def test_invalid_spec(self):
        with pytest.raises(InvalidArgument):
            SyntheticScenario(n_clips=2, n_events=3)
        with pytest.raises(InvalidArgument):
            SyntheticScenario(t_frames=1, tokens_per_frame=4, event_tokens=5)
        with pytest.raises(InvalidArgument):
            generate_scenario(SMALL).clip(3)


class TestTraceFile:
    def outputs(self, n_clips=3):
        data = generate_scenario(SMALL)
        be = MockBackend(SMALL_MODEL)
        return [be.process_clip(context(data, c, be)) for c in range(n_clips)]

    def assert_same(self, a, b):
        assert a.trace.clip_id == b.trace.clip_id and a.trace.layout == b.trace.layout
        assert a.trace.layers == b.trace.layers and a.caption.text == b.caption.text
        for key in a.trace.blocks:
            assert a.trace.blocks[key].tobytes() == b.trace.blocks[key].tobytes()
        assert a.caption.token_embeddings.tobytes() == b.caption.token_embeddings.tobytes()

    def test_round_trip(self, tmp_path):
        outs = self.outputs()
        write_trace(tmp_path / "t.trace", outs)
        back = read_trace(tmp_path / "t.trace")
        assert len(back) == 3
        for a, b in zip(outs, back):
            self.assert_same(a, b)

    def test_f64_round_trip_of_arbitrary_values(self):
        rng = np.random.default_rng(0)
        out = self.outputs(1)[0]
        noisy = out.caption.token_embeddings + rng.normal(size=out.caption.token_embeddings.shape) * 1e-9
        rec = BackendOutput(CaptionRecord(0, noisy, "x\ny=z"), out.trace)
        back = decode_trace(encode_trace([rec], dtype="f64"))[0]
        assert back.caption.token_embeddings.tobytes() == noisy.tobytes()
        assert back.caption.text == "x\ny=z"

    def test_truncated(self):
        data = encode_trace(self.outputs(1))
        for cut in (3, 12, 20, len(data) // 2, len(data) - 1):
            with pytest.raises(TraceFormatError) as err:
                decode_trace(data[:cut])
            assert 0 <= err.value.offset <= cut

    def test_trailing_bytes(self):
        with pytest.raises(TraceFormatError):
            decode_trace(encode_trace(self.outputs(1)) + b"\0")

    def test_version_99(self):
        data = bytearray(encode_trace(self.outputs(1)))
        data[8:12] = struct.pack("<I", 99)
        with pytest.raises(UnsupportedVersion):
            decode_trace(bytes(data))

    def test_bad_magic(self):
        with pytest.raises(TraceFormatError):
            decode_trace(b"NOTATRACE" + bytes(20))

    def test_replay_backend(self):
        outs = self.outputs()
        replay = ReplayBackend(decode_trace(encode_trace(outs)))
        data = generate_scenario(SMALL)
        got = replay.process_clip(context(data, 1, replay))
        self.assert_same(outs[1], got)
        with pytest.raises(InvalidArgument):
            ReplayBackend(outs[:1]).process_clip(context(data, 2, replay))
