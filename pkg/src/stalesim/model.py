"""Two-layer ReLU MLP with softmax / negative log likelihood, on a flat parameter vector.

Layout of the flat vector, in order: ``w1`` (n_in x n_hidden, row major),
``b1`` (n_hidden), ``w2`` (n_hidden x n_out, row major), ``b2`` (n_out).
The default 784-200-10 network has 159,010 parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from stalesim.numerics import RngStream, seq_sum


@dataclass(frozen=True)
class Minibatch:
    inputs: np.ndarray  # (mu, n_in), values in [0, 1]
    labels: np.ndarray  # (mu,), ints

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class ForwardCache:
    inputs: np.ndarray
    labels: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    probs: np.ndarray


class MLP:
    def __init__(self, n_in: int = 784, n_hidden: int = 200, n_out: int = 10):
        self.n_in = n_in
        self.n_hidden = n_hidden
        self.n_out = n_out
        sizes = [
            ("w1", (n_in, n_hidden)),
            ("b1", (n_hidden,)),
            ("w2", (n_hidden, n_out)),
            ("b2", (n_out,)),
        ]
        self.layout: dict[str, tuple[int, int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in sizes:
            count = math.prod(shape)
            self.layout[name] = (offset, offset + count, shape)
            offset += count
        self.n_params = offset

    def __repr__(self) -> str:
        return f"MLP({self.n_in}, {self.n_hidden}, {self.n_out})"

    def unpack(self, params: np.ndarray) -> dict[str, np.ndarray]:
        """Reshaped views into ``params``; no copies."""
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        return {name: params[lo:hi].reshape(shape) for name, (lo, hi, shape) in self.layout.items()}

    def init_params(self, rng: RngStream) -> np.ndarray:
        """Glorot-uniform weights, zero biases. Draws are taken w1 first, then w2."""
        params = np.zeros(self.n_params)
        views = self.unpack(params)
        for name, fan_in, fan_out in (("w1", self.n_in, self.n_hidden), ("w2", self.n_hidden, self.n_out)):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w = views[name]
            w[...] = (2.0 * rng.uniforms(w.size) - 1.0).reshape(w.shape) * bound
        return params

    def _logits(self, params: np.ndarray, inputs: np.ndarray):
        p = self.unpack(params)
        hidden_pre = inputs @ p["w1"] + p["b1"]
        hidden = np.maximum(hidden_pre, 0.0)
        logits = hidden @ p["w2"] + p["b2"]
        return hidden_pre, hidden, logits

    def sample_nll(self, params: np.ndarray, inputs: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Per-sample negative log likelihood."""
        _, _, logits = self._logits(params, inputs)
        return _nll_from_logits(logits, labels)[0]

    def forward(self, params: np.ndarray, batch: Minibatch) -> tuple[float, ForwardCache]:
        hidden_pre, hidden, logits = self._logits(params, batch.inputs)
        nll, probs = _nll_from_logits(logits, batch.labels)
        cost = float(seq_sum(nll)) / len(batch)
        return cost, ForwardCache(batch.inputs, batch.labels, hidden_pre, hidden, probs)

    def backward(self, params: np.ndarray, cache: ForwardCache) -> np.ndarray:
        """Gradient of the minibatch-mean NLL, in the flat layout."""
        p = self.unpack(params)
        mu = cache.labels.shape[0]
        d_logits = cache.probs.copy()
        d_logits[np.arange(mu), cache.labels] -= 1.0
        d_logits /= mu

        grad = np.empty(self.n_params)
        g = self.unpack(grad)
        g["w2"][...] = cache.hidden.T @ d_logits
        g["b2"][...] = seq_sum(d_logits, axis=0)
        d_hidden = (d_logits @ p["w2"].T) * (cache.hidden_pre > 0.0)
        g["w1"][...] = cache.inputs.T @ d_hidden
        g["b1"][...] = seq_sum(d_hidden, axis=0)
        return grad

    def gradient(self, params: np.ndarray, batch: Minibatch) -> tuple[float, np.ndarray]:
        cost, cache = self.forward(params, batch)
        return cost, self.backward(params, cache)


def _nll_from_logits(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    norm = seq_sum(exp, axis=1)
    log_probs = shifted - np.log(norm)[:, None]
    probs = exp / norm[:, None]
    nll = -log_probs[np.arange(labels.shape[0]), labels]
    return nll, probs
