"""Run configuration: flat ``key = value`` text, CLI overrides, validation, canonical echo."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

from stalesim.errors import ConfigError
from stalesim.servers import FASGD_STEPS, POLICIES

SELECTION_MODES = ("uniform", "weighted-decay")
NORMS = ("l2", "linf")


@dataclass(frozen=True)
class RunConfig:
    policy: str
    lam: int
    mu: int
    alpha: float
    iterations: int
    seed: int
    gamma: float = 0.9
    beta: float = 0.9
    eps_stat: float = 1e-8
    eps_bw: float = 1e-8
    fasgd_step: str = "divide-std"
    drops_enabled: bool = False
    c_push: float = 0.0
    c_fetch: float = 0.0
    eval_every: int = 1000
    bstale_every: int = 0
    bstale_norm: str = "l2"
    selection: str = "uniform"
    decay: float = 1.0
    recovery: float = 1.0
    hidden: int = 200
    train_images: str = ""
    train_labels: str = ""
    synthetic: int = 0
    data_seed: int = 0
    train_size: int = 10000
    val_size: int = 2000
    val_holdout: int = 10000
    output: str = ""

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def echo(self) -> str:
        return echo_config(self)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.echo().encode("utf-8")).hexdigest()


# config-file key -> dataclass attribute; only lambda differs
_ATTR = {"lambda": "lam"}
_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
KEYS = tuple(next((k for k, a in _ATTR.items() if a == name), name) for name in _FIELDS)
REQUIRED = tuple(
    key for key in KEYS if _FIELDS[_ATTR.get(key, key)].default is dataclasses.MISSING
)


def _attr(key: str) -> str:
    return _ATTR.get(key, key)


def _type_of(key: str) -> type:
    return {"int": int, "float": float, "bool": bool, "str": str}[_FIELDS[_attr(key)].type]


def _convert(key: str, raw: str):
    kind = _type_of(key)
    text = raw.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key} expects {kind.__name__}, got {raw.strip()!r}") from None
    return text


def parse_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = value
    return values


def validate(cfg: RunConfig) -> list[str]:
    problems = []

    def need(ok: bool, message: str):
        if not ok:
            problems.append(message)

    need(cfg.policy in POLICIES, f"policy must be one of {', '.join(POLICIES)}")
    need(cfg.lam >= 1, "lambda must be ≥ 1")
    need(cfg.mu >= 1, "mu must be ≥ 1")
    need(cfg.alpha > 0, "alpha must be > 0")
    need(cfg.iterations >= 0, "iterations must be ≥ 0")
    need(0 <= cfg.seed < 2**64, "seed must be in [0, 2^64)")
    need(0 <= cfg.data_seed < 2**64, "data_seed must be in [0, 2^64)")
    need(cfg.fasgd_step in FASGD_STEPS, f"fasgd_step must be one of {', '.join(FASGD_STEPS)}")
    need(0 < cfg.gamma < 1, "gamma must be in (0, 1)")
    need(0 < cfg.beta < 1, "beta must be in (0, 1)")
    need(cfg.eps_stat > 0, "eps_stat must be > 0")
    need(cfg.eps_bw > 0, "eps_bw must be > 0")
    need(cfg.c_push >= 0, "c_push must be ≥ 0")
    need(cfg.c_fetch >= 0, "c_fetch must be ≥ 0")
    need(not (cfg.drops_enabled and cfg.policy == "sync"), "drops_enabled requires an asynchronous policy")
    need(cfg.eval_every >= 1, "eval_every must be ≥ 1")
    need(cfg.bstale_every >= 0, "bstale_every must be ≥ 0")
    need(cfg.bstale_norm in NORMS, f"bstale_norm must be one of {', '.join(NORMS)}")
    need(cfg.selection in SELECTION_MODES, f"selection must be one of {', '.join(SELECTION_MODES)}")
    need(0 < cfg.decay <= 1, "decay must be in (0, 1]")
    need(cfg.recovery >= 1, "recovery must be ≥ 1")
    need(cfg.hidden >= 1, "hidden must be ≥ 1")
    need(bool(cfg.train_images) == bool(cfg.train_labels), "train_images and train_labels must be set together")
    need(cfg.synthetic >= 0, "synthetic must be ≥ 0")
    need(cfg.train_size >= 1, "train_size must be ≥ 1")
    need(cfg.val_size >= 1, "val_size must be ≥ 1")
    need(cfg.val_holdout >= cfg.val_size, "val_holdout must be ≥ val_size")
    return problems


def build_config(values: dict) -> RunConfig:
    """Build and validate a config from already-typed ``key -> value`` pairs."""
    missing = [key for key in REQUIRED if key not in values]
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing))
    cfg = RunConfig(**{_attr(k): v for k, v in values.items()})
    problems = validate(cfg)
    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return cfg


def typed_overrides(overrides: dict[str, str]) -> dict:
    """Convert raw ``key -> text`` overrides to ``attribute -> typed value``."""
    out = {}
    for key, value in overrides.items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        out[_attr(key)] = _convert(key, value)
    return out


def parse_config(file_text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    """File values first, then ``overrides`` (raw strings, as given on the command line)."""
    raw = parse_text(file_text)
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = str(value)
    typed = {}
    errors = []
    for key, value in raw.items():
        try:
            typed[key] = _convert(key, value)
        except ConfigError as exc:
            errors.append(str(exc))
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return build_config(typed)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def echo_config(cfg: RunConfig) -> str:
    lines = []
    for key in KEYS:
        value = _format(getattr(cfg, _attr(key)))
        lines.append(f"{key} = {value}".rstrip())
    return "\n".join(lines) + "\n"
