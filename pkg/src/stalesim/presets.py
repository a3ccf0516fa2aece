"""Experiment presets: the constant-product batch grid, lambda scaling, bandwidth sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field

from stalesim.config import RunConfig
from stalesim.dispatcher import Simulation, prepare_data, transmit_probability
from stalesim.errors import ConfigError

SASGD_ALPHA = 0.04
FASGD_ALPHA = 0.005
GRID_PAIRS = ((1, 128), (4, 32), (8, 16), (32, 4))  # (mu, lambda), mu * lambda = 128
LAMBDA_SCALE = (250, 500, 1000, 10000)
LAMBDA_SCALE_MU = 128
BANDWIDTH_RATES = (1.0, 0.5, 0.2, 0.1)
BANDWIDTH_SHAPE = (8, 16)  # (mu, lambda)
CALIBRATION_STEPS = 500

DESK_ITERATIONS = 20000
PRESETS = ("grid128", "lambda_scale", "bandwidth")


@dataclass
class Preset:
    name: str
    configs: list[RunConfig] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)

    def add(self, label: str, cfg: RunConfig) -> None:
        self.labels.append(label)
        self.configs.append(cfg)

    def __iter__(self):
        return iter(zip(self.labels, self.configs))

    def __len__(self) -> int:
        return len(self.configs)


def _policy_pair(base: RunConfig, **shape) -> list[tuple[str, RunConfig]]:
    return [
        ("sasgd", base.replace(policy="sasgd", alpha=SASGD_ALPHA, **shape)),
        ("fasgd", base.replace(policy="fasgd", alpha=FASGD_ALPHA, **shape)),
    ]


def base_config(iterations: int = DESK_ITERATIONS, seed: int = 0, **overrides) -> RunConfig:
    return RunConfig(policy="fasgd", lam=1, mu=1, alpha=FASGD_ALPHA, iterations=iterations, seed=seed).replace(
        **overrides
    )


def c_for_rate(rate: float, s_mean: float, eps_bw: float) -> float:
    """Inverse of the transmit threshold: the c giving probability ``rate`` at ``s_mean``."""
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"transmit rate must be in (0, 1], got {rate}")
    return (s_mean + eps_bw) * (1.0 / rate - 1.0)


def calibrate_s_mean(cfg: RunConfig, steps: int = CALIBRATION_STEPS) -> float:
    """Mean gradient-std statistic after a short drops-disabled FASGD warmup."""
    warm = cfg.replace(policy="fasgd", drops_enabled=False, iterations=steps, bstale_every=0)
    train, val = prepare_data(warm)
    sim = Simulation(warm, train, val)
    for _ in range(steps):
        sim.step()
    return sim.server.s_mean()


def preset(name: str, iterations: int = DESK_ITERATIONS, seed: int = 0, **overrides) -> Preset:
    base = base_config(iterations, seed, **overrides)
    out = Preset(name)
    if name == "grid128":
        for mu, lam in GRID_PAIRS:
            for policy, cfg in _policy_pair(base, mu=mu, lam=lam):
                out.add(f"{policy}_mu{mu}_lambda{lam}", cfg)
    elif name == "lambda_scale":
        for lam in LAMBDA_SCALE:
            for policy, cfg in _policy_pair(base, mu=LAMBDA_SCALE_MU, lam=lam):
                out.add(f"{policy}_mu{LAMBDA_SCALE_MU}_lambda{lam}", cfg)
    elif name == "bandwidth":
        mu, lam = BANDWIDTH_SHAPE
        fasgd = base.replace(policy="fasgd", alpha=FASGD_ALPHA, mu=mu, lam=lam)
        out.add("fasgd_baseline", fasgd)
        s_mean = calibrate_s_mean(fasgd)
        for direction in ("fetch", "push"):
            for rate in BANDWIDTH_RATES:
                c = c_for_rate(rate, s_mean, fasgd.eps_bw)
                cfg = fasgd.replace(drops_enabled=True, **{f"c_{direction}": c})
                out.add(f"bfasgd_{direction}{int(round(rate * 100)):03d}", cfg)
    else:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return out


def expected_rate(cfg: RunConfig, s_mean: float, direction: str) -> float:
    return transmit_probability(getattr(cfg, f"c_{direction}"), s_mean, cfg.eps_bw)
