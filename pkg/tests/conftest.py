import math

import numpy as np
import pytest

from vidmem.backend import MockModelConfig
from vidmem.pipeline import PipelineConfig
from vidmem.scoring import AttentionTrace, TokenLayout

# A reduced mock: four layers and short captions keep the streaming tests fast.
LIGHT_MODEL = MockModelConfig(n_layers=4, caption_len=8)
LIGHT_PIPELINE = PipelineConfig(layer_subset=(0, 1, 2, 3))


def random_trace(rng: np.random.Generator, n_layers=None, n_heads=None, n_caption=None, n_visual=None,
                 clip_id=0) -> AttentionTrace:
    """Blocks are slices of genuine softmax rows, so every row sums to at most 1."""
    n_layers = n_layers or int(rng.integers(1, 7))
    n_heads = n_heads or int(rng.integers(1, 9))
    n_caption = n_caption or int(rng.integers(1, 17))
    n_visual = n_visual or int(rng.integers(1, 257))
    extra = int(rng.integers(0, 8))
    blocks = {}
    for l in range(n_layers):
        for h in range(n_heads):
            logits = rng.normal(size=(n_caption, n_visual + extra)) * 2.0
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            blocks[(l, h)] = p[:, :n_visual]
    layout = TokenLayout(0, n_visual, extra, n_caption)
    return AttentionTrace(clip_id, n_layers, n_heads, layout, blocks)


def naive_scores(trace: AttentionTrace, layers, mode: str) -> np.ndarray:
    """Triple loop over layers, heads and caption rows in plain Python floats."""
    nc, nv = trace.layout.n_caption, trace.layout.n_visual
    rows = {key: block.tolist() for key, block in trace.blocks.items()}
    out = [0.0] * nv
    for j in range(nv):
        layer_vals = []
        for l in layers:
            head_vals = []
            for h in range(trace.n_heads):
                block = rows[(l, h)]
                col = [block[i][j] for i in range(nc)]
                head_vals.append(math.fsum(col) / nc)
            layer_vals.append(max(head_vals) if mode == "max" else sum(head_vals) / len(head_vals))
        out[j] = sum(layer_vals) / len(layer_vals)
    return np.array(out)


@pytest.fixture
def light_model():
    return LIGHT_MODEL


@pytest.fixture
def light_pipeline():
    return LIGHT_PIPELINE


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdicts collected by tests/test_acceptance.py."""
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[num])
