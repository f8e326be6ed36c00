"""Plain-text run configuration.

Format: ``[section]`` headers, ``key = value`` lines, ``#`` comments.
Sections: ``pipeline`` (PipelineConfig), ``scenario`` (SyntheticScenario),
``model`` (MockModelConfig), ``output`` (paths). Unknown sections or keys are
errors. Every key has a default; a missing ``seed`` is logged as a notice.
Precedence when used from the CLI: flag > file > default.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .backend import MockModelConfig, SyntheticScenario
from .errors import VidMemError
from .pipeline import PipelineConfig, Selector
from .retrieval import Similarity
from .scoring import AggregationMode

log = logging.getLogger(__name__)


class ConfigError(VidMemError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)
        self.line = line


def _int_list(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.replace(" ", "").split(",") if x)


def _optional_int(v: str) -> int | None:
    return None if v.lower() in ("", "none") else int(v)


def _optional_int_list(v: str) -> tuple[int, ...] | None:
    return None if v.lower() in ("", "none") else _int_list(v)


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


_CONVERTERS: dict[str, dict[str, Callable[[str], Any]]] = {
    "pipeline": {
        "clip_size": int, "max_mem": int, "tokens_per_frame": int, "n_select": int,
        "window": int, "memory_half": _optional_int, "layer_subset": _int_list,
        "aggregation": AggregationMode.parse, "selector": Selector.parse,
        "mmr_lambda": float, "retrieval_budget": int, "retrieval_k": _optional_int,
        "recall_k": int, "similarity": lambda v: Similarity(v.strip().lower()), "seed": int,
    },
    "scenario": {
        "n_clips": int, "t_frames": int, "tokens_per_frame": int, "dim": int,
        "n_events": int, "event_tokens": int, "noise_scale": float,
        "event_noise": float, "seed": int,
    },
    "model": {
        "dim": int, "n_layers": int, "n_heads": int, "head_dim": int,
        "caption_len": int, "seed": int, "trace_layers": _optional_int_list,
        "query_gain": float, "seed_mix": float,
    },
    "output": {"report": str, "state": str, "scenario_dir": str, "timings": _bool},
}
_NOTICE_KEYS = {"pipeline": ("seed",), "scenario": ("seed",), "model": ("seed",)}


@dataclass
class RunConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    scenario: SyntheticScenario = field(default_factory=SyntheticScenario)
    model: MockModelConfig = field(default_factory=MockModelConfig)
    output: dict[str, Any] = field(default_factory=dict)
    present: dict[str, set[str]] = field(default_factory=dict)


def parse_sections(text: str, source: str = "<config>") -> dict[str, dict[str, tuple[str, int]]]:
    """Split config text into ``{section: {key: (raw value, line number)}}``."""
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno, source)
            current = line[1:-1].strip().lower()
            if current not in _CONVERTERS:
                raise ConfigError(f"unknown section [{current}]; valid: {', '.join(_CONVERTERS)}", lineno, source)
            sections.setdefault(current, {})
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lower()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        if current is None:
            raise ConfigError(f"key {key!r} appears before any [section]", lineno, source)
        if key not in _CONVERTERS[current]:
            valid = ", ".join(sorted(_CONVERTERS[current]))
            raise ConfigError(f"unknown key {key!r} in [{current}]; valid: {valid}", lineno, source)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", lineno, source)
        sections[current][key] = (value.strip(), lineno)
    return sections


def build_section(cls, section: str, entries: dict[str, tuple[str, int]], source: str, overrides: dict | None = None):
    kwargs = {}
    for key, (raw, lineno) in entries.items():
        try:
            kwargs[key] = _CONVERTERS[section][key](raw)
        except (ValueError, VidMemError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, source) from exc
    kwargs.update(overrides or {})
    for key in _NOTICE_KEYS.get(section, ()):
        if key not in kwargs:
            default = next(f.default for f in dataclasses.fields(cls) if f.name == key)
            log.warning("[%s] %s not set; using default %s=%r", section, key, key, default)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError, VidMemError) as exc:
        raise ConfigError(f"invalid [{section}] settings: {exc}", None, source) from exc


def load_config(text: str, source: str = "<config>", pipeline_overrides: dict | None = None) -> RunConfig:
    sections = parse_sections(text, source)
    out_entries = sections.get("output", {})
    output = {}
    for key, (raw, lineno) in out_entries.items():
        try:
            output[key] = _CONVERTERS["output"][key](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, source) from exc
    scenario = build_section(SyntheticScenario, "scenario", sections.get("scenario", {}), source)
    model_entries = dict(sections.get("model", {}))
    model_overrides = {}
    if "dim" not in model_entries and "dim" in sections.get("scenario", {}):
        # model width follows the scenario unless set explicitly
        model_overrides["dim"] = scenario.dim
        if "head_dim" not in model_entries and "n_heads" not in model_entries:
            model_overrides["head_dim"] = scenario.dim // MockModelConfig.n_heads
    model = build_section(MockModelConfig, "model", model_entries, source, model_overrides)
    pipeline = build_section(PipelineConfig, "pipeline", sections.get("pipeline", {}), source, pipeline_overrides)
    return RunConfig(pipeline, scenario, model, output, {k: set(v) for k, v in sections.items()})


def load_config_file(path, pipeline_overrides: dict | None = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(p)) from exc
    return load_config(text, str(p), pipeline_overrides)


def dump_section(name: str, obj) -> str:
    """Render a dataclass as a config section that :func:`load_config` reads back."""
    lines = [f"[{name}]"]
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif hasattr(v, "value"):
            v = v.value
        elif v is None:
            v = "none"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
