"""Self-checks shared by the CLI and the test suite: gradient check and reference SGD."""

from __future__ import annotations

import numpy as np

from stalesim.config import RunConfig
from stalesim.data import Dataset, Sampler
from stalesim.dispatcher import Simulation
from stalesim.model import MLP, Minibatch
from stalesim.numerics import RngStream

GRADCHECK_STEP = 1e-5
GRADCHECK_TOLERANCE = 1e-4


def _random_problem(seed: int, model: MLP, mu: int = 4):
    rng = RngStream(seed, "gradcheck")
    params = 2.0 * rng.uniforms(model.n_params) - 1.0
    inputs = rng.uniforms(mu * model.n_in).reshape(mu, model.n_in)
    labels = np.floor(rng.uniforms(mu) * model.n_out).astype(np.int64)
    return params, Minibatch(inputs, labels), rng


def gradcheck(seed: int, coords: int = 20, h: float = GRADCHECK_STEP, model: MLP | None = None) -> float:
    """Max relative error of backprop against central differences on random coordinates."""
    model = model or MLP(6, 4, 3)
    params, batch, rng = _random_problem(seed, model)
    _, analytic = model.gradient(params, batch)
    picks = np.floor(rng.uniforms(coords) * model.n_params).astype(np.int64)
    worst = 0.0
    for j in picks:
        plus, minus = params.copy(), params.copy()
        plus[j] += h
        minus[j] -= h
        numeric = (model.forward(plus, batch)[0] - model.forward(minus, batch)[0]) / (2.0 * h)
        scale = max(abs(numeric), abs(analytic[j]), 1e-8)
        worst = max(worst, abs(numeric - analytic[j]) / scale)
    return worst


def vanilla_sgd(model: MLP, params: np.ndarray, train: Dataset, mu: int, alpha: float, steps: int, seed: int):
    """Plain single-learner SGD drawing batches from the ``data`` stream of ``seed``."""
    sampler = Sampler(train, mu, RngStream(seed, "data"))
    for _ in range(steps):
        _, grad = model.gradient(params, sampler.next_batch())
        params = params - alpha * grad
    return params


def sync_vs_vanilla(train: Dataset, val: Dataset, rounds: int, lam: int = 4, mu: int = 8, alpha: float = 0.04, seed: int = 0):
    """Server parameters after ``rounds`` sync rounds, and the matching vanilla-SGD parameters.

    Sync with ``lam`` clients of batch ``mu`` consumes the data stream in the
    same order as one learner with batch ``lam * mu``, so both see identical
    samples.
    """
    cfg = RunConfig(policy="sync", lam=lam, mu=mu, alpha=alpha, iterations=rounds * lam, seed=seed, eval_every=10**9)
    sim = Simulation(cfg, train, val)
    init = sim.server.params
    for _ in range(rounds * lam):
        sim.step()
    reference = vanilla_sgd(sim.model, init, train, lam * mu, alpha, rounds, seed)
    return sim.server.params, reference


def max_relative_difference(a: np.ndarray, b: np.ndarray) -> float:
    """Largest ``|a - b| / max(|a|, |b|)`` over coordinates where either is non-zero."""
    scale = np.maximum(np.abs(a), np.abs(b))
    diff = np.abs(a - b)
    nz = scale > 0
    return float(np.max(diff[nz] / scale[nz])) if nz.any() else 0.0


def scale_relative_difference(a: np.ndarray, b: np.ndarray) -> float:
    """Largest absolute difference measured against the largest magnitude in either vector.

    Unlike the per-coordinate form this does not blow up at coordinates that
    happen to sit near zero.
    """
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / scale if scale > 0 else 0.0
