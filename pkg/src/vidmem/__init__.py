"""Streaming video memory.

Visual tokens chosen by caption attention feed a bounded short-term memory;
captions are retrieved with maximal marginal relevance when a query arrives."""

from .backend import (
    BackendOutput,
    MockBackend,
    MockModelConfig,
    ReplayBackend,
    SyntheticScenario,
    generate_scenario,
)
from .errors import VidMemError
from .memory import ContextBudget, ShortTermMemory, assemble_context
from .pipeline import PipelineConfig, RunMetrics, Selector, answer_query, run_simulation
from .retrieval import CaptionRecord, QueryEmbedding, budgeted_retrieve, mmr_retrieve
from .scoring import AggregationMode, AttentionTrace, TokenLayout, compute_token_scores
from .selection import ClipTokens, select_attention_topk, select_uniform
from .tracefile import read_trace, write_trace

__all__ = [
    "AggregationMode", "AttentionTrace", "BackendOutput", "CaptionRecord", "ClipTokens",
    "ContextBudget", "MockBackend", "MockModelConfig", "PipelineConfig", "QueryEmbedding",
    "ReplayBackend", "RunMetrics", "Selector", "ShortTermMemory", "SyntheticScenario",
    "TokenLayout", "VidMemError", "answer_query", "assemble_context", "budgeted_retrieve",
    "compute_token_scores", "generate_scenario", "mmr_retrieve", "read_trace",
    "run_simulation", "select_attention_topk", "select_uniform", "write_trace",
]
__version__ = "0.1.0"
