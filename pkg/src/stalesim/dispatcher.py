"""Simulation engine: picks the next client, mediates push/fetch, records metrics.

One step is one client turn, executed atomically:

1. the selected client computes a gradient on its replica over a fresh minibatch;
2. push: transmit and apply, or (when dropped) replay that client's cached gradient;
3. fetch: receive the server's current parameters, or keep the stale replica;
4. bandwidth counters advance.

All randomness comes from four labelled streams (``init``, ``data``,
``dispatch``, ``drop``), so changing how many draws one consumer takes never
shifts another consumer's sequence.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np

from stalesim.config import RunConfig
from stalesim.data import Dataset, Sampler, find_mnist, load_idx, split_train_val, synthetic_dataset, synthetic_size
from stalesim.errors import NumericError
from stalesim.metrics import MetricsLog, MetricsRecord, eval_validation, gradient_distance
from stalesim.model import MLP
from stalesim.numerics import RngStream, seq_sum
from stalesim.servers import Server, make_server

log = logging.getLogger(__name__)


@dataclass
class ClientState:
    id: int
    params: np.ndarray  # shared reference to a server snapshot; never mutated
    param_timestamp: int = 0
    weight: float = 1.0
    blocked: bool = False


@dataclass(frozen=True)
class SelectionRule:
    mode: str = "uniform"
    decay: float = 1.0
    recovery: float = 1.0


@dataclass(frozen=True)
class SimEvent:
    iteration: int
    client: int
    tau: int | None
    push_sent: bool
    fetch_sent: bool
    unblock: bool
    b_staleness: float | None = None


def select_client(clients: list[ClientState], rule: SelectionRule, rng: RngStream) -> int:
    """Draw one unblocked client with probability proportional to its weight.

    Consumes exactly one uniform draw.
    """
    u = rng.next_uniform()
    eligible = [c for c in clients if not c.blocked] if any(c.blocked for c in clients) else clients
    if rule.mode == "uniform":
        chosen = eligible[min(int(u * len(eligible)), len(eligible) - 1)]
    else:
        weights = np.array([c.weight for c in eligible])
        cumulative = np.cumsum(weights)
        k = int(np.searchsorted(cumulative, u * cumulative[-1], side="right"))
        chosen = eligible[min(k, len(eligible) - 1)]
        chosen.weight *= rule.decay
        for c in clients:
            c.weight = min(1.0, c.weight * rule.recovery)
    return chosen.id


def transmit_probability(c: float, s_mean: float, eps_bw: float) -> float:
    return 1.0 / (1.0 + c / (s_mean + eps_bw))


def should_transmit(c: float, s_mean: float, eps_bw: float, rng: RngStream) -> bool:
    return rng.next_uniform() < transmit_probability(c, s_mean, eps_bw)


@functools.lru_cache(maxsize=4)
def _synthetic(data_seed: int, n: int) -> Dataset:
    return synthetic_dataset(RngStream(data_seed, "synthetic"), n)


def prepare_data(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    """Train/validation splits for a config; falls back to synthetic data."""
    if cfg.train_images:
        full = load_idx(cfg.train_images, cfg.train_labels)
        return split_train_val(full, cfg.train_size, cfg.val_size, cfg.val_holdout)
    n = cfg.synthetic or synthetic_size(cfg.train_size, cfg.val_size)
    return split_train_val(_synthetic(cfg.data_seed, n), cfg.train_size, cfg.val_size)


def mnist_overrides(directory) -> dict[str, str]:
    found = find_mnist(directory)
    if found is None:
        return {}
    return {"train_images": str(found[0]), "train_labels": str(found[1])}


class Simulation:
    def __init__(self, cfg: RunConfig, train: Dataset, val: Dataset, model: MLP | None = None, server: Server | None = None):
        self.cfg = cfg
        self.train = train
        self.val = val
        self.model = model or MLP(train.images.shape[1], cfg.hidden, 10)
        self.streams = {label: RngStream(cfg.seed, label) for label in ("init", "data", "dispatch", "drop")}
        params = self.model.init_params(self.streams["init"])
        extra = {"step": cfg.fasgd_step} if cfg.policy == "fasgd" else {}
        self.server = server or make_server(
            cfg.policy,
            params,
            cfg.alpha,
            cfg.lam,
            track_stats=cfg.drops_enabled,
            cache_gradients=cfg.drops_enabled,
            gamma=cfg.gamma,
            beta=cfg.beta,
            eps_stat=cfg.eps_stat,
            **extra,
        )
        self.clients = [ClientState(i, self.server.params) for i in range(cfg.lam)]
        self.rule = SelectionRule(cfg.selection, cfg.decay, cfg.recovery)
        self.sampler = Sampler(train, cfg.mu, self.streams["data"])
        self.iteration = 0
        self.pushes_sent = self.pushes_dropped = 0
        self.fetches_sent = self.fetches_dropped = 0

    def _transmit(self, c: float) -> bool:
        stats = self.server.stats
        send = should_transmit(c, self.server.s_mean(), self.cfg.eps_bw, self.streams["drop"])
        # no statistics yet: s is still zero and would veto every first push
        return send or stats.count == 0

    def step(self) -> SimEvent:
        cfg, server = self.cfg, self.server
        it = self.iteration + 1
        cid = select_client(self.clients, self.rule, self.streams["dispatch"])
        client = self.clients[cid]
        batch = self.sampler.next_batch()
        _, grad = self.model.gradient(client.params, batch)

        b_stale = None
        if cfg.bstale_every and it % cfg.bstale_every == 0:
            _, at_server = self.model.gradient(server.params, batch)
            b_stale = gradient_distance(grad, at_server, cfg.bstale_norm)

        push = self._transmit(cfg.c_push) if cfg.drops_enabled else True
        unblock = True
        if push:
            tau = server.timestamp - client.param_timestamp
            _, _, unblock = server.apply_update(grad, client.param_timestamp, cid)
            self.pushes_sent += 1
        else:
            cached = server.cached_timestamp(cid)
            tau = None if cached is None else server.timestamp - cached
            server.cached_reapply(cid)
            self.pushes_dropped += 1

        fetch = self._transmit(cfg.c_fetch) if cfg.drops_enabled else True
        if fetch:
            self.fetches_sent += 1
        else:
            self.fetches_dropped += 1
        if cfg.policy == "sync":
            # the fetch is held until the round completes, then every waiting client receives it
            client.blocked = True
            if unblock:
                for c in self.clients:
                    c.params, c.param_timestamp, c.blocked = server.params, server.timestamp, False
        elif fetch:
            client.params, client.param_timestamp = server.params, server.timestamp

        self.iteration = it
        return SimEvent(it, cid, tau, push, fetch, unblock, b_stale)

    def record(self, event: SimEvent | None, val_cost: float | None) -> MetricsRecord:
        return MetricsRecord(
            iteration=self.iteration,
            server_timestamp=self.server.timestamp,
            client=None if event is None else event.client,
            tau=None if event is None else event.tau,
            val_cost=val_cost,
            pushes_sent=self.pushes_sent,
            pushes_dropped=self.pushes_dropped,
            fetches_sent=self.fetches_sent,
            fetches_dropped=self.fetches_dropped,
            b_staleness=None if event is None else event.b_staleness,
        )

    def validation_cost(self) -> float:
        return eval_validation(self.model, self.server.params, self.val)

    def run(self, iterations: int | None = None) -> MetricsLog:
        total = self.cfg.iterations if iterations is None else iterations
        out = MetricsLog(fingerprint=self.cfg.fingerprint(), synthetic_data=self.train.synthetic)
        out.append(self.record(None, self.validation_cost()))
        for _ in range(total):
            try:
                event = self.step()
            except NumericError as exc:
                out.diverged_at = self.iteration + 1
                out.divergence = str(exc)
                log.warning("run diverged at iteration %d: %s", out.diverged_at, exc)
                if out.final.val_cost is None:
                    out.final.val_cost = self.validation_cost()
                break
            evaluate = event.iteration % self.cfg.eval_every == 0 or event.iteration == total
            out.append(self.record(event, self.validation_cost() if evaluate else None))
        return out


def run(cfg: RunConfig, train: Dataset | None = None, val: Dataset | None = None) -> MetricsLog:
    if train is None or val is None:
        train, val = prepare_data(cfg)
    return Simulation(cfg, train, val).run()


def replica_memory(sim: Simulation) -> int:
    """Bytes held by distinct parameter snapshots across clients and server."""
    seen = {id(sim.server.params): sim.server.params.nbytes}
    for c in sim.clients:
        seen.setdefault(id(c.params), c.params.nbytes)
    return int(seq_sum(np.array(list(seen.values()), dtype=np.float64)))
