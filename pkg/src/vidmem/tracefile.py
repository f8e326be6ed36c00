"""Binary container for backend outputs (attention blocks plus caption embeddings).

Layout, all integers little-endian::

    magic      8 bytes  b"VMTRACE\\0"
    version    uint32   (currently 1)
    count      uint32   number of records
    record * count:
        meta_len  uint32
        meta      UTF-8 ``key=value`` lines
        payload   blocks for each stored layer (in ``layers`` order), heads in
                  order, each row-major (n_caption x n_visual); then caption
                  embeddings (caption_tokens x dim). Element type from ``dtype``.

Meta keys: clip_id, n_layers, n_heads, layers, n_memory, n_visual,
n_instruction, n_caption, dim, caption_tokens, dtype (f32 or f64), text
(JSON-encoded string).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend import BackendOutput
from .errors import TraceFormatError, UnsupportedVersion, VidMemError
from .retrieval import CaptionRecord
from .scoring import AttentionTrace, TokenLayout

MAGIC = b"VMTRACE\x00"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_INT_KEYS = (
    "clip_id", "n_layers", "n_heads", "n_memory", "n_visual",
    "n_instruction", "n_caption", "dim", "caption_tokens",
)


def _encode_meta(out: BackendOutput, dtype: str) -> bytes:
    t, lay = out.trace, out.trace.layout
    meta = {
        "clip_id": t.clip_id,
        "n_layers": t.n_layers,
        "n_heads": t.n_heads,
        "layers": ",".join(str(l) for l in t.layers),
        "n_memory": lay.n_memory,
        "n_visual": lay.n_visual,
        "n_instruction": lay.n_instruction,
        "n_caption": lay.n_caption,
        "dim": out.caption.token_embeddings.shape[1],
        "caption_tokens": out.caption.token_count,
        "dtype": dtype,
        "text": json.dumps(out.caption.text),
    }
    return "".join(f"{k}={v}\n" for k, v in meta.items()).encode("utf-8")


def encode_trace(outputs: Sequence[BackendOutput], dtype: str = "f32") -> bytes:
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")
    dt = _DTYPES[dtype]
    parts = [MAGIC, struct.pack("<II", VERSION, len(outputs))]
    for out in outputs:
        meta = _encode_meta(out, dtype)
        parts.append(struct.pack("<I", len(meta)))
        parts.append(meta)
        for layer in out.trace.layers:
            for head in range(out.trace.n_heads):
                parts.append(np.ascontiguousarray(out.trace.blocks[(layer, head)], dtype=dt).tobytes())
        parts.append(np.ascontiguousarray(out.caption.token_embeddings, dtype=dt).tobytes())
    return b"".join(parts)


def write_trace(path, outputs: Sequence[BackendOutput], dtype: str = "f32") -> None:
    Path(path).write_bytes(encode_trace(outputs, dtype))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TraceFormatError(f"truncated {what}: need {n} bytes, {len(self.data) - self.pos} left", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def _parse_meta(raw: bytes, offset: int) -> dict:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TraceFormatError("metadata is not UTF-8", offset) from exc
    meta: dict = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise TraceFormatError(f"bad metadata line {line!r}", offset)
        meta[key] = value
    try:
        for key in _INT_KEYS:
            meta[key] = int(meta[key])
        meta["layers"] = tuple(int(x) for x in meta["layers"].split(",") if x)
        meta["text"] = json.loads(meta["text"])
    except (KeyError, ValueError) as exc:
        raise TraceFormatError(f"bad or missing metadata field: {exc}", offset) from exc
    if meta.get("dtype") not in _DTYPES:
        raise TraceFormatError(f"unknown dtype {meta.get('dtype')!r}", offset)
    return meta


def decode_trace(data: bytes) -> list[BackendOutput]:
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise TraceFormatError("bad magic", 0)
    version = r.u32("version")
    if version != VERSION:
        raise UnsupportedVersion(version)
    count = r.u32("record count")
    outputs = []
    for _ in range(count):
        meta_len = r.u32("metadata length")
        meta_off = r.pos
        meta = _parse_meta(r.take(meta_len, "metadata"), meta_off)
        dt = _DTYPES[meta["dtype"]]
        n_cap, n_vis = meta["n_caption"], meta["n_visual"]

        def read(rows: int, cols: int, what: str) -> np.ndarray:
            raw = r.take(rows * cols * dt.itemsize, what)
            return np.frombuffer(raw, dtype=dt).reshape(rows, cols).astype(np.float64)

        blocks = {}
        for layer in meta["layers"]:
            for head in range(meta["n_heads"]):
                blocks[(layer, head)] = read(n_cap, n_vis, f"block ({layer}, {head})")
        cap_off = r.pos
        emb = read(meta["caption_tokens"], meta["dim"], "caption embeddings")
        layout = TokenLayout(meta["n_memory"], n_vis, meta["n_instruction"], n_cap)
        try:
            trace = AttentionTrace(meta["clip_id"], meta["n_layers"], meta["n_heads"], layout, blocks, meta["layers"])
            caption = CaptionRecord(meta["clip_id"], emb, meta["text"])
        except VidMemError as exc:
            raise TraceFormatError(f"invalid record contents: {exc}", cap_off) from exc
        outputs.append(BackendOutput(caption, trace))
    if r.pos != len(data):
        raise TraceFormatError(f"{len(data) - r.pos} trailing bytes", r.pos)
    return outputs


def read_trace(path) -> list[BackendOutput]:
    return decode_trace(Path(path).read_bytes())
