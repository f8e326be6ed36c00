"""Small numerical kernels shared by the other modules, plus a portable
SplitMix64 generator.

Vectors and matrices are plain float64 numpy arrays. ``cosine`` and
``cosine_many`` share one formulation so that a scalar similarity and the
matching row of a batched similarity are bit-identical; retrieval relies on
this for exact tie behaviour.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateVector, InvalidArgument, InvalidDimension

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def as_vec(values, name: str = "vector") -> np.ndarray:
    """Validate and widen to a 1-D float64 array."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InvalidDimension(f"{name} must be a non-empty 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgument(f"{name} contains non-finite entries")
    return v


def as_mat(values, name: str = "matrix") -> np.ndarray:
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidDimension(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidArgument(f"{name} contains non-finite entries")
    return m


def softmax_row(logits) -> np.ndarray:
    x = as_vec(logits, "logits")
    e = np.exp(x - x.max())
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-D array; ``-inf`` entries get zero mass."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cosine_many(rows: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cosine between every row of ``rows`` and ``v``, clipped to [-1, 1]."""
    rows = np.asarray(rows, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if rows.ndim != 2 or v.ndim != 1 or rows.shape[1] != v.shape[0] or v.size == 0:
        raise InvalidDimension(f"cannot compare shapes {rows.shape} and {v.shape}")
    vnorm = np.sqrt((v * v).sum())
    rnorm = np.sqrt((rows * rows).sum(axis=1))
    if vnorm == 0.0 or np.any(rnorm == 0.0):
        raise DegenerateVector("cosine similarity of a zero-norm vector")
    dots = (rows * v).sum(axis=1)
    return np.clip(dots / (rnorm * vnorm), -1.0, 1.0)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or u.shape != v.shape:
        raise InvalidDimension(f"length mismatch: {u.shape} vs {v.shape}")
    return float(cosine_many(u[None, :], v)[0])


def argsort_desc(scores) -> np.ndarray:
    """Indices ordering ``scores`` from high to low; ties keep ascending index."""
    s = as_vec(scores, "scores")
    return np.argsort(-s, kind="stable")


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps modulo 2**64, matching the scalar path
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream.

    The scalar and vectorised draws consume the same sequence, so
    ``rng.uniform(n)`` equals ``n`` successive ``rng.next_f64()`` calls.
    Not thread-safe; use :meth:`clone` or :meth:`fork` per worker.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64

    def clone(self) -> "Rng":
        return Rng(self.state)

    def fork(self, *keys: int) -> "Rng":
        """Independent child stream keyed by integers; does not advance self."""
        s = self.state
        for k in keys:
            s = _mix64((s ^ _mix64((int(k) + _GAMMA) & MASK64)) & MASK64)
        return Rng(s)

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & MASK64
        return _mix64(self.state)

    def next_f64(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        states = np.uint64(self.state) + steps * np.uint64(_GAMMA)
        self.state = (self.state + n * _GAMMA) & MASK64
        return _mix64_array(states)

    def uniform(self, n: int) -> np.ndarray:
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, shape) -> np.ndarray:
        """Standard normal draws via Box-Muller."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape))
        half = (n + 1) // 2
        u = self.uniform(2 * half)
        r = np.sqrt(-2.0 * np.log1p(-u[:half]))
        theta = 2.0 * np.pi * u[half:]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return z[:n].reshape(shape)

    def below(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise InvalidArgument("bound must be positive")
        return min(int(self.next_f64() * n), n - 1)

    def sample(self, n: int, k: int) -> list[int]:
        """``k`` distinct integers from range(n) in draw order (partial Fisher-Yates)."""
        if not 0 <= k <= n:
            raise InvalidArgument(f"cannot draw {k} distinct values from {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def unit_vectors(self, n: int, dim: int) -> np.ndarray:
        v = self.normal((n, dim))
        return v / np.linalg.norm(v, axis=1, keepdims=True)


def rng_next_f64(rng: Rng) -> float:
    return rng.next_f64()

