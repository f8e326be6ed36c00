"""Per-token importance from caption-to-visual cross attention.

A trace keeps only the block where caption rows attend to the current
clip's visual columns; memory columns are never scored. Scores are the
caption-row mean of that block, reduced over heads (mean or max) and then
averaged over the chosen layers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, InvalidDimension, MissingTrace

# slack for float32-stored traces whose rows carry almost all their mass
ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class TokenLayout:
    n_memory: int
    n_visual: int
    n_instruction: int
    n_caption: int

    def __post_init__(self):
        for name in ("n_memory", "n_visual", "n_instruction", "n_caption"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be >= 0")

    @property
    def visual_col_offset(self) -> int:
        return self.n_memory

    @property
    def caption_row_offset(self) -> int:
        return self.n_memory + self.n_visual + self.n_instruction

    @property
    def n_total(self) -> int:
        return self.n_memory + self.n_visual + self.n_instruction + self.n_caption


class AggregationMode(enum.Enum):
    MEAN = "avg"
    MAX = "max"

    @classmethod
    def parse(cls, name: str) -> "AggregationMode":
        key = name.strip().lower()
        aliases = {"avg": cls.MEAN, "mean": cls.MEAN, "max": cls.MAX}
        if key not in aliases:
            raise InvalidArgument(f"unknown aggregation {name!r}; use avg or max")
        return aliases[key]


@dataclass
class AttentionTrace:
    """Cross-attention blocks for one clip.

    ``blocks[(layer, head)]`` has shape ``(n_caption, n_visual)``. ``layers``
    lists the layer ids actually stored (a subset of ``range(n_layers)``).
    """

    clip_id: int
    n_layers: int
    n_heads: int
    layout: TokenLayout
    blocks: dict[tuple[int, int], np.ndarray]
    layers: tuple[int, ...] = field(default=())
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if not self.layers:
            self.layers = tuple(sorted({l for l, _ in self.blocks}))
        self.layers = tuple(int(l) for l in self.layers)
        if self.validate:
            self.check()

    def check(self) -> None:
        shape = (self.layout.n_caption, self.layout.n_visual)
        for layer in self.layers:
            if not 0 <= layer < self.n_layers:
                raise InvalidArgument(f"layer {layer} outside 0..{self.n_layers - 1}")
            for head in range(self.n_heads):
                if (layer, head) not in self.blocks:
                    raise MissingTrace(f"clip {self.clip_id}: no block for layer {layer} head {head}")
        for key, block in self.blocks.items():
            if block.shape != shape:
                raise InvalidDimension(f"block {key} has shape {block.shape}, expected {shape}")
            if block.size and (block.min() < 0.0 or block.max() > 1.0):
                raise InvalidArgument(f"block {key} has entries outside [0, 1]")
            if block.size and block.sum(axis=1).max() > 1.0 + ROW_SUM_TOL:
                raise InvalidArgument(f"block {key} has a row with mass above 1")

    def stacked(self, layer: int) -> np.ndarray:
        """Blocks of one layer as an array of shape (heads, caption, visual)."""
        try:
            return np.stack([self.blocks[(layer, h)] for h in range(self.n_heads)])
        except KeyError as exc:
            raise MissingTrace(f"clip {self.clip_id}: layer {layer} not in trace") from exc


@dataclass(frozen=True)
class ScoreVector:
    clip_id: int
    scores: np.ndarray


def extract_cross_block(full_attention, layout: TokenLayout) -> np.ndarray:
    a = np.asarray(full_attention, dtype=np.float64)
    n = layout.n_total
    if a.shape != (n, n):
        raise InvalidDimension(f"attention is {a.shape}, layout needs ({n}, {n})")
    c0 = layout.visual_col_offset
    return a[layout.caption_row_offset:, c0:c0 + layout.n_visual].copy()


def compute_token_scores(
    trace: AttentionTrace,
    layer_subset: Sequence[int],
    mode: AggregationMode = AggregationMode.MEAN,
) -> ScoreVector:
    if len(layer_subset) == 0:
        raise InvalidArgument("layer subset is empty")
    if trace.layout.n_caption < 1 or trace.layout.n_visual < 1:
        raise InvalidArgument("scoring needs at least one caption row and one visual column")
    per_layer = []
    for layer in layer_subset:
        if not 0 <= layer < trace.n_layers:
            raise InvalidArgument(f"layer {layer} outside 0..{trace.n_layers - 1}")
        blocks = trace.stacked(layer)
        # sorted before summation so row/head permutations give bit-identical sums
        per_head = np.sort(blocks, axis=1).mean(axis=1)
        if mode is AggregationMode.MAX:
            per_layer.append(per_head.max(axis=0))
        else:
            per_layer.append(np.sort(per_head, axis=0).mean(axis=0))
    scores = np.mean(per_layer, axis=0)
    return ScoreVector(trace.clip_id, scores)


def uniform_layer_subset(n_layers: int, n_pick: int) -> list[int]:
    """``n_pick`` evenly spaced layer ids, one at the centre of each equal-depth band."""
    if not 1 <= n_pick <= n_layers:
        raise InvalidArgument(f"cannot pick {n_pick} of {n_layers} layers")
    out: list[int] = []
    for i in range(n_pick):
        idx = min(max(math.floor((i + 0.5) * n_layers / n_pick), 0), n_layers - 1)
        if out and idx <= out[-1]:
            idx = out[-1] + 1
        out.append(idx)
    return out
