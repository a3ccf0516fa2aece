"""Run metrics: validation cost, bandwidth counters, B-staleness, CSV serialization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from stalesim.errors import ConfigError, SimError
from stalesim.numerics import seq_sum

CSV_COLUMNS = (
    "iteration",
    "server_timestamp",
    "client",
    "tau",
    "val_cost",
    "pushes_sent",
    "pushes_dropped",
    "fetches_sent",
    "fetches_dropped",
    "b_staleness",
)
_OPTIONAL_INT = {"client", "tau"}
_OPTIONAL_REAL = {"val_cost", "b_staleness"}

EVAL_CHUNK = 256


@dataclass
class MetricsRecord:
    iteration: int
    server_timestamp: int
    client: int | None = None
    tau: int | None = None
    val_cost: float | None = None
    pushes_sent: int = 0
    pushes_dropped: int = 0
    fetches_sent: int = 0
    fetches_dropped: int = 0
    b_staleness: float | None = None


@dataclass
class MetricsLog:
    records: list[MetricsRecord] = field(default_factory=list)
    fingerprint: str = ""
    synthetic_data: bool = False
    diverged_at: int | None = None
    divergence: str = ""

    def append(self, record: MetricsRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise SimError(
                f"iteration {record.iteration} does not follow {self.records[-1].iteration}"
            )
        self.records.append(record)

    @property
    def final(self) -> MetricsRecord:
        return self.records[-1]

    def val_costs(self) -> list[tuple[int, float]]:
        return [(r.iteration, r.val_cost) for r in self.records if r.val_cost is not None]

    def final_val_cost(self) -> float:
        return self.val_costs()[-1][1]


def eval_validation(model, params: np.ndarray, dataset, chunk: int = EVAL_CHUNK) -> float:
    """Mean NLL over the whole split; chunk sums are added in order."""
    total = 0.0
    n = len(dataset)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        nll = model.sample_nll(params, dataset.images[start:stop], dataset.labels[start:stop])
        total += float(seq_sum(nll))
    return total / n


def gradient_distance(a: np.ndarray, b: np.ndarray, norm: str = "l2") -> float:
    diff = a - b
    if norm == "l2":
        return math.sqrt(float(seq_sum(diff * diff)))
    if norm == "linf":
        return float(np.max(np.abs(diff))) if diff.size else 0.0
    raise ConfigError(f"norm must be l2 or linf, got {norm!r}")


def measure_b_staleness(model, client_params, server_params, batch, norm: str = "l2") -> float:
    """Distance between the gradients of the same minibatch at two parameter points."""
    _, g_client = model.gradient(client_params, batch)
    _, g_server = model.gradient(server_params, batch)
    return gradient_distance(g_client, g_server, norm)


def format_real(x: float) -> str:
    return format(x, ".17g")


def _cell(name: str, value) -> str:
    if value is None:
        return ""
    if name in _OPTIONAL_REAL:
        return format_real(value)
    return str(value)


def write_csv(log: MetricsLog, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for rec in log.records:
                writer.writerow([_cell(name, getattr(rec, name)) for name in CSV_COLUMNS])
    except OSError as exc:
        raise SimError(f"cannot write metrics to {path}: {exc}") from exc


def read_csv(path) -> MetricsLog:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise SimError(f"{path}: unexpected header {header}")
        log = MetricsLog()
        for row in reader:
            values = {}
            for name, cell in zip(CSV_COLUMNS, row):
                if cell == "":
                    values[name] = None
                elif name in _OPTIONAL_REAL:
                    values[name] = float(cell)
                else:
                    values[name] = int(cell)
            log.append(MetricsRecord(**values))
    return log


assert tuple(f.name for f in fields(MetricsRecord)) == CSV_COLUMNS
