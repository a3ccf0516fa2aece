"""Flat-vector arithmetic and a counter-addressable random source.

Parameter vectors are plain 1-D ``float64`` numpy arrays. ``axpy`` always
returns a fresh array, so snapshots handed out by the server can be shared
between clients without copying. ``elementwise`` writes into ``out`` when one
is given, which the server uses for its scratch buffers.

``RngStream`` is SplitMix64 used in counter mode: draw ``k`` of a stream is
``mix(key + (k + 1) * GOLDEN)``, where ``key`` is derived from the master seed
and a text label. The sequence depends only on 64-bit integer arithmetic, so it
is the same on every platform, and streams with different labels never share
state.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from stalesim.errors import ConfigError, NumericError

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TO_UNIT = 2.0**-53

STREAM_LABELS = ("init", "data", "dispatch", "drop")


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def _label_hash(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "big")


class RngStream:
    """Deterministic uniform stream addressed by ``(seed, label, counter)``."""

    def __init__(self, seed: int, label: str, counter: int = 0):
        if not 0 <= seed <= MASK64:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed
        self.label = label
        self.counter = counter
        self._key = _mix(seed ^ _label_hash(label))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, label={self.label!r}, counter={self.counter})"

    def value_at(self, index: int) -> float:
        """Uniform in [0, 1) for draw ``index``; does not advance the stream."""
        z = _mix((self._key + (index + 1) * GOLDEN) & MASK64)
        return (z >> 11) * _TO_UNIT

    def next_uniform(self) -> float:
        u = self.value_at(self.counter)
        self.counter += 1
        return u

    def uniforms(self, n: int) -> np.ndarray:
        """Next ``n`` draws as an array; identical to ``n`` calls of next_uniform."""
        if n <= 0:
            return np.empty(0, dtype=np.float64)
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        z = _mix_array(np.uint64(self._key) + idx * np.uint64(GOLDEN))
        self.counter += n
        return (z >> np.uint64(11)).astype(np.float64) * _TO_UNIT

    def normals(self, n: int) -> np.ndarray:
        """Standard normals by Box-Muller; consumes ``2 * ceil(n / 2)`` draws."""
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        angle = 2.0 * math.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = radius * np.cos(angle)
        z[:, 1] = radius * np.sin(angle)
        return z.reshape(-1)[:n]


def _check_lengths(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise ConfigError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")


def axpy(a, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return a new array ``a * x + y``; ``a`` is a scalar or a per-coordinate array."""
    _check_lengths(x, y)
    out = np.multiply(a, x)
    out += y
    return out


def elementwise(op: str, x: np.ndarray, y: np.ndarray | None = None, eps: float = 0.0, out=None) -> np.ndarray:
    """Apply ``mul``, ``square``, ``sqrt`` or ``recip_sqrt_eps`` (``1 / sqrt(x + eps)``)."""
    if op == "mul":
        if y is None:
            raise ConfigError("mul needs two operands")
        _check_lengths(x, y)
        return np.multiply(x, y, out=out)
    if op == "square":
        return np.multiply(x, x, out=out)
    if op in ("sqrt", "recip_sqrt_eps"):
        shifted = np.add(x, eps, out=out) if eps else x
        low = float(shifted.min()) if shifted.size else 0.0
        if low < 0.0:
            raise NumericError(f"negative argument {low!r} to sqrt; gradient statistics are corrupt")
        root = np.sqrt(shifted, out=out)
        if op == "sqrt":
            return root
        return np.divide(1.0, root, out=root)
    raise ConfigError(f"unknown elementwise op {op!r}")


def seq_sum(x: np.ndarray, axis: int = 0):
    """Left-to-right sequential sum (``np.sum`` uses pairwise summation)."""
    if x.shape[axis] == 0:
        return np.sum(x, axis=axis)
    return np.take(np.cumsum(x, axis=axis), -1, axis=axis)


def seq_mean(x: np.ndarray) -> float:
    return float(seq_sum(x)) / x.shape[0]


def all_finite(x: np.ndarray) -> bool:
    return bool(np.isfinite(x).all())
