"""Parameter-server update policies.

Each server owns the canonical parameters and the write timestamp. Parameter
arrays are never mutated in place: every write builds a new array, so clients
may keep references to old snapshots for free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stalesim.errors import ConfigError, NumericError, ProtocolError
from stalesim.numerics import all_finite, axpy, elementwise, seq_mean

POLICIES = ("sync", "asgd", "sasgd", "fasgd")


@dataclass
class FasgdStats:
    """Moving averages over incoming gradients, all elementwise.

    ``n`` and ``b`` track the first two raw moments, ``v`` the inverse
    standard deviation that scales the FASGD step, and ``s`` the standard
    deviation itself, which gates transmissions.
    """

    n: np.ndarray
    b: np.ndarray
    v: np.ndarray
    s: np.ndarray
    gamma: float = 0.9
    beta: float = 0.9
    eps: float = 1e-8
    count: int = 0

    @classmethod
    def initial(cls, size: int, gamma: float = 0.9, beta: float = 0.9, eps: float = 1e-8) -> FasgdStats:
        return cls(np.zeros(size), np.zeros(size), np.ones(size), np.zeros(size), gamma, beta, eps)

    def copy(self) -> FasgdStats:
        return FasgdStats(
            self.n.copy(), self.b.copy(), self.v.copy(), self.s.copy(),
            self.gamma, self.beta, self.eps, self.count,
        )

    def variance(self) -> np.ndarray:
        return self.n - self.b * self.b


def update_stats_inplace(stats: FasgdStats, grads: np.ndarray, work: tuple[np.ndarray, np.ndarray]) -> None:
    """Fold one gradient into ``stats`` in place; ``work`` is two model-length buffers.

    The server runs this every step on ~160k coordinates, where allocating
    fresh temporaries costs more than the arithmetic.
    """
    g, bt = stats.gamma, stats.beta
    t, u = work
    # overflow to inf/nan is caught by the finiteness check on the step itself
    with np.errstate(over="ignore", invalid="ignore"):
        _fold(stats, grads, t, u, g, bt)
    stats.count += 1


def _fold(stats, grads, t, u, g, bt):
    elementwise("square", grads, out=t)
    t *= 1.0 - g
    stats.n *= g
    stats.n += t
    np.multiply(grads, 1.0 - g, out=t)
    stats.b *= g
    stats.b += t
    elementwise("square", stats.b, out=t)
    np.subtract(stats.n, t, out=t)
    t += stats.eps
    root = elementwise("sqrt", t, out=t)
    np.divide(1.0, root, out=u)
    u *= 1.0 - bt
    stats.v *= bt
    stats.v += u
    np.multiply(root, 1.0 - bt, out=u)
    stats.s *= bt
    stats.s += u


def update_stats(stats: FasgdStats, grads: np.ndarray) -> FasgdStats:
    """Pure form of the statistics update: returns new statistics."""
    out = stats.copy()
    update_stats_inplace(out, grads, (np.empty_like(grads), np.empty_like(grads)))
    return out


def staleness_divisor(tau: int) -> int:
    return max(1, tau)


class Server:
    """Common state: parameters, timestamp, optional statistics and gradient cache."""

    name = "base"

    def __init__(
        self,
        params: np.ndarray,
        alpha: float,
        clients: int,
        *,
        track_stats: bool = False,
        cache_gradients: bool = False,
        gamma: float = 0.9,
        beta: float = 0.9,
        eps_stat: float = 1e-8,
    ):
        self.params = params
        self.timestamp = 0
        self.alpha = alpha
        self.clients = clients
        self.stats = FasgdStats.initial(params.shape[0], gamma, beta, eps_stat) if track_stats else None
        self._work = (np.empty_like(params), np.empty_like(params)) if track_stats else None
        self.cache: dict[int, tuple[np.ndarray, int]] | None = {} if cache_gradients else None

    def s_mean(self) -> float:
        if self.stats is None:
            raise ConfigError(f"{self.name} server is not tracking gradient statistics")
        return seq_mean(self.stats.s)

    def apply_update(self, grads: np.ndarray, timestamp: int, client: int):
        """Apply one pushed gradient. Returns ``(params, timestamp, unblock)``."""
        if timestamp > self.timestamp:
            raise ProtocolError(
                f"client {client} pushed a gradient stamped {timestamp} ahead of server {self.timestamp}"
            )
        if self.cache is not None:
            self.cache[client] = (grads, timestamp)
        return self._apply(grads, timestamp, client)

    def cached_reapply(self, client: int):
        """Replay the last gradient pushed by ``client``; ``None`` if there is none."""
        if self.cache is None or client not in self.cache:
            return None
        grads, timestamp = self.cache[client]
        return self._apply(grads, timestamp, client)

    def cached_timestamp(self, client: int) -> int | None:
        if self.cache is None or client not in self.cache:
            return None
        return self.cache[client][1]

    def _apply(self, grads, timestamp, client):
        raise NotImplementedError

    def _observe(self, grads: np.ndarray) -> None:
        if self.stats is not None:
            update_stats_inplace(self.stats, grads, self._work)

    def _write(self, new_params: np.ndarray) -> None:
        if not all_finite(new_params):
            bad = int(np.count_nonzero(~np.isfinite(new_params)))
            raise NumericError(
                f"{self.name} update at timestamp {self.timestamp} produced {bad} non-finite parameters"
            )
        self.params = new_params
        self.timestamp += 1


class SyncServer(Server):
    """Barrier: waits for one gradient per client, then applies them in client-id order."""

    name = "sync"

    def __init__(self, params, alpha, clients, **kw):
        super().__init__(params, alpha, clients, **kw)
        self.pending: dict[int, np.ndarray] = {}

    def _apply(self, grads, timestamp, client):
        if client in self.pending:
            raise ProtocolError(f"client {client} contributed twice in sync round {self.timestamp}")
        self.pending[client] = grads
        if len(self.pending) < self.clients:
            return self.params, self.timestamp, False

        params = self.params
        for cid in sorted(self.pending):
            g = self.pending[cid]
            self._observe(g)
            params = axpy(-self.alpha, g / self.clients, params)
        self.pending = {}
        self._write(params)
        return self.params, self.timestamp, True


class AsgdServer(Server):
    name = "asgd"

    def _apply(self, grads, timestamp, client):
        self._observe(grads)
        self._write(axpy(-self.alpha, grads, self.params))
        return self.params, self.timestamp, True


class SasgdServer(Server):
    """Learning rate divided by the step-staleness of the gradient (clamped to 1)."""

    name = "sasgd"

    def _apply(self, grads, timestamp, client):
        self._observe(grads)
        rate = self.alpha / staleness_divisor(self.timestamp - timestamp)
        self._write(axpy(-rate, grads, self.params))
        return self.params, self.timestamp, True


FASGD_STEPS = ("divide-std", "divide-v")


class FasgdServer(Server):
    """Per-coordinate step modulated by the gradient statistics and the staleness.

    ``step="divide-std"`` (default) uses rate ``alpha * v / tau``: since ``v``
    averages the inverse standard deviation, the step is divided by the
    gradient spread. ``step="divide-v"`` uses ``alpha / (v * tau)``.
    Statistics are refreshed with the incoming gradient before the step.
    ``freeze_stats`` pins them at their initial values (v = 1), which reduces
    either form to SASGD.
    """

    name = "fasgd"

    def __init__(self, params, alpha, clients, freeze_stats: bool = False, step: str = "divide-std", **kw):
        if step not in FASGD_STEPS:
            raise ConfigError(f"fasgd_step must be one of {', '.join(FASGD_STEPS)}, got {step!r}")
        kw["track_stats"] = True
        super().__init__(params, alpha, clients, **kw)
        self.freeze_stats = freeze_stats
        self.step = step

    def rate(self, tau: int, out: np.ndarray | None = None) -> np.ndarray:
        v = self.stats.v
        if self.step == "divide-std":
            rate = np.multiply(v, self.alpha, out=out)
            rate /= tau
        else:
            rate = np.multiply(v, tau, out=out)
            np.divide(self.alpha, rate, out=rate)
        return rate

    def _apply(self, grads, timestamp, client):
        if not self.freeze_stats:
            self._observe(grads)
        rate = self.rate(staleness_divisor(self.timestamp - timestamp), out=self._work[0])
        if not all_finite(rate):
            raise NumericError(f"fasgd rate became non-finite at timestamp {self.timestamp}")
        rate *= -1.0
        self._write(axpy(rate, grads, self.params))
        return self.params, self.timestamp, True


_SERVERS = {"sync": SyncServer, "asgd": AsgdServer, "sasgd": SasgdServer, "fasgd": FasgdServer}


def make_server(policy: str, params: np.ndarray, alpha: float, clients: int, **kw) -> Server:
    try:
        cls = _SERVERS[policy]
    except KeyError:
        raise ConfigError(f"policy must be one of {', '.join(POLICIES)}, got {policy!r}") from None
    return cls(params, alpha, clients, **kw)
