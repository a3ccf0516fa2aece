import math

import numpy as np
import pytest

from stalesim.config import RunConfig
from stalesim.dispatcher import Simulation
from stalesim.errors import ConfigError, SimError
from stalesim.metrics import (
    CSV_COLUMNS,
    MetricsLog,
    MetricsRecord,
    eval_validation,
    format_real,
    gradient_distance,
    measure_b_staleness,
    read_csv,
    write_csv,
)
from stalesim.model import MLP, Minibatch


class Quadratic:
    """f(theta) = h * theta^2 / 2 per coordinate, gradient h * theta; batch ignored."""

    def __init__(self, h):
        self.h = h

    def gradient(self, params, batch):
        return 0.5 * self.h * float(params @ params), self.h * params


def test_b_staleness_identity_and_toy():
    toy = Quadratic(3.5)
    theta = np.array([0.8])
    assert measure_b_staleness(toy, theta, theta, None) == 0.0
    for delta in (0.25, -1.3, 1e-6):
        value = measure_b_staleness(toy, theta, theta + delta, None)
        assert value == pytest.approx(abs(3.5 * delta), abs=1e-12)
        assert value == measure_b_staleness(toy, theta + delta, theta, None)


def test_b_staleness_on_mlp(small_data):
    train, _ = small_data
    model = MLP(784, 8, 10)
    a = 0.1 * np.sin(np.arange(model.n_params))
    batch = Minibatch(train.images[:4], train.labels[:4])
    assert measure_b_staleness(model, a, a, batch) == 0.0
    assert measure_b_staleness(model, a, a * 1.1, batch) > 0.0


def test_gradient_distance_norms():
    a, b = np.array([3.0, 0.0]), np.array([0.0, -4.0])
    assert gradient_distance(a, b, "l2") == 5.0
    assert gradient_distance(a, b, "linf") == 4.0
    with pytest.raises(ConfigError):
        gradient_distance(a, b, "l1")


def test_eval_validation(small_data):
    _, val = small_data
    model = MLP(784, 8, 10)
    assert eval_validation(model, np.zeros(model.n_params), val) == pytest.approx(math.log(10), abs=1e-13)
    params = 0.05 * np.cos(np.arange(model.n_params))
    first = eval_validation(model, params, val, chunk=7)
    assert first == eval_validation(model, params, val, chunk=7)
    single = float(np.mean(model.sample_nll(params, val.images, val.labels)))
    assert first == pytest.approx(single, abs=1e-12)
    assert eval_validation(model, params, val, chunk=256) == pytest.approx(single, abs=1e-12)


def test_format_real():
    assert format_real(0.1) == "0.10000000000000001"
    assert float(format_real(1 / 3)) == 1 / 3


def sample_log():
    log = MetricsLog()
    log.append(MetricsRecord(0, 0, val_cost=2.302585092994046))
    log.append(MetricsRecord(1, 1, client=3, tau=0, pushes_sent=1, fetches_sent=1))
    log.append(MetricsRecord(2, 2, client=0, tau=1, val_cost=0.1, pushes_sent=1, pushes_dropped=1,
                             fetches_sent=2, b_staleness=1e-300))
    return log


def test_csv_round_trip(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(sample_log(), first)
    back = read_csv(first)
    assert back.records == sample_log().records
    write_csv(back, second)
    assert first.read_bytes() == second.read_bytes()
    lines = first.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[2] == "1,1,3,0,,1,0,1,0,"
    assert "0.10000000000000001" in lines[3]


def test_empty_log_is_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    write_csv(MetricsLog(), path)
    assert path.read_text() == ",".join(CSV_COLUMNS) + "\n"


def test_write_failure_names_path(tmp_path):
    target = tmp_path / "missing" / "x.csv"
    with pytest.raises(SimError, match="missing"):
        write_csv(sample_log(), target)


def test_iterations_must_increase():
    log = sample_log()
    with pytest.raises(SimError):
        log.append(MetricsRecord(2, 3))


def test_counters_never_decrease(small_data):
    cfg = RunConfig(policy="fasgd", lam=4, mu=4, alpha=0.005, iterations=50, seed=2, hidden=16,
                    drops_enabled=True, c_push=0.01, c_fetch=0.05, eval_every=25)
    log = Simulation(cfg, *small_data).run()
    for prev, cur in zip(log.records, log.records[1:]):
        for name in ("pushes_sent", "pushes_dropped", "fetches_sent", "fetches_dropped"):
            assert getattr(cur, name) >= getattr(prev, name)


def test_sync_validation_cost_trends_down(small_data):
    cfg = RunConfig(policy="sync", lam=4, mu=8, alpha=0.1, iterations=2000, seed=0, hidden=32, eval_every=40)
    costs = [c for _, c in Simulation(cfg, *small_data).run().val_costs()]
    window = np.convolve(costs, np.ones(10) / 10, mode="valid")
    assert window[-1] < window[0]
    assert np.mean(np.diff(window)) < 0
