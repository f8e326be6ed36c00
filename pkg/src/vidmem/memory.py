"""Short-term FIFO memory of selected token sets and per-clip context assembly."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ContextOverflow, InvalidArgument, OutOfOrderClip
from .scoring import TokenLayout
from .selection import ClipTokens, SelectedTokenSet


class ShortTermMemory:
    """Bounded FIFO of :class:`SelectedTokenSet`, oldest first.

    ``max_mem = 0`` disables recurrency: pushes are accepted and dropped.
    """

    def __init__(self, max_mem: int, entries: Iterable[SelectedTokenSet] = ()):
        if max_mem < 0:
            raise InvalidArgument("max_mem must be >= 0")
        self.max_mem = max_mem
        self._entries: deque[SelectedTokenSet] = deque(maxlen=max_mem)
        self.last_clip_id: int | None = None
        for s in entries:
            self.push(s)

    def push(self, s: SelectedTokenSet) -> None:
        if self.last_clip_id is not None and s.clip_id <= self.last_clip_id:
            raise OutOfOrderClip(f"clip {s.clip_id} pushed after clip {self.last_clip_id}")
        self._entries.append(s)  # deque maxlen evicts the oldest entry
        self.last_clip_id = s.clip_id

    @property
    def entries(self) -> tuple[SelectedTokenSet, ...]:
        return tuple(self._entries)

    @property
    def n_tokens(self) -> int:
        return sum(s.n_select for s in self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def snapshot(self) -> "ShortTermMemory":
        snap = ShortTermMemory(self.max_mem)
        snap._entries.extend(self._entries)
        snap.last_clip_id = self.last_clip_id
        return snap


def mem_push(memory: ShortTermMemory, s: SelectedTokenSet) -> ShortTermMemory:
    memory.push(s)
    return memory


@dataclass(frozen=True)
class ContextBudget:
    window: int
    memory_half: int
    clip_half: int

    def __post_init__(self):
        if min(self.window, self.memory_half, self.clip_half) < 0:
            raise InvalidArgument("budget counts must be >= 0")
        if self.memory_half + self.clip_half != self.window:
            raise InvalidArgument(
                f"memory_half + clip_half = {self.memory_half + self.clip_half} != window {self.window}"
            )

    @classmethod
    def even(cls, window: int) -> "ContextBudget":
        return cls(window, window // 2, window - window // 2)


@dataclass(frozen=True)
class ContextAssembly:
    memory_tokens: np.ndarray  # (n_memory, dim), oldest first
    memory_origin: np.ndarray  # (n_memory, 2) rows of (clip_id, local index)
    clip: ClipTokens
    layout: TokenLayout

    @property
    def n_visual_context(self) -> int:
        return self.layout.n_memory + self.layout.n_visual


def assemble_context(
    memory: ShortTermMemory,
    clip: ClipTokens,
    budget: ContextBudget,
    n_instruction: int = 0,
    n_caption: int = 0,
) -> ContextAssembly:
    if clip.n_tokens > budget.clip_half:
        raise ContextOverflow(f"clip has {clip.n_tokens} tokens, clip budget is {budget.clip_half}")
    n_mem = memory.n_tokens
    if n_mem > budget.memory_half:
        raise ContextOverflow(f"memory holds {n_mem} tokens, memory budget is {budget.memory_half}")
    entries = memory.entries
    if entries:
        tokens = np.concatenate([s.embeddings for s in entries])
        origin = np.concatenate(
            [np.column_stack([np.full(s.n_select, s.clip_id), s.indices]) for s in entries]
        ).astype(np.int64)
    else:
        tokens = np.empty((0, clip.dim))
        origin = np.empty((0, 2), dtype=np.int64)
    layout = TokenLayout(n_mem, clip.n_tokens, n_instruction, n_caption)
    return ContextAssembly(tokens, origin, clip, layout)
