"""Command line entry point: ``stalesim run|preset|gradcheck|selftest``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from stalesim.checks import GRADCHECK_TOLERANCE, gradcheck, max_relative_difference, scale_relative_difference, sync_vs_vanilla
from stalesim.config import KEYS, RunConfig, parse_config, typed_overrides, validate
from stalesim.dispatcher import Simulation, mnist_overrides, prepare_data
from stalesim.errors import SimError
from stalesim.metrics import MetricsLog, write_csv
from stalesim.presets import DESK_ITERATIONS, PRESETS, preset

log = logging.getLogger("stalesim")


def parse_overrides(extra: list[str]) -> dict[str, str]:
    """Turn ``--key value`` / ``--key=value`` pairs into config overrides."""
    out: dict[str, str] = {}
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--"):
            raise SimError(f"unexpected argument {token!r}")
        if "=" in token:
            key, value = token[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise SimError(f"{token} needs a value")
            key, value = token[2:], extra[i + 1]
            i += 2
        key = key.replace("-", "_")
        if key not in KEYS:
            raise SimError(f"unknown option --{key}")
        out[key] = value
    return out


def echo_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".config")


def execute(cfg: RunConfig, csv_path: Path | None) -> MetricsLog:
    train, val = prepare_data(cfg)
    if train.synthetic:
        print("note: MNIST files not configured; using the synthetic digit dataset", file=sys.stderr)
    started = time.time()
    result = Simulation(cfg, train, val).run()
    if csv_path is not None:
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        write_csv(result, csv_path)
        echo_path(csv_path).write_text(cfg.echo(), encoding="utf-8")
    final = result.final
    print(
        f"fingerprint={result.fingerprint[:16]} iterations={final.iteration} "
        f"final_val_cost={result.final_val_cost():.6f} synthetic={str(result.synthetic_data).lower()} "
        f"pushes={final.pushes_sent}/{final.pushes_sent + final.pushes_dropped} "
        f"fetches={final.fetches_sent}/{final.fetches_sent + final.fetches_dropped} "
        f"seconds={time.time() - started:.1f}"
    )
    if result.diverged_at is not None:
        print(f"DIVERGED at iteration {result.diverged_at}: {result.divergence}", file=sys.stderr)
    return result


def cmd_run(args, extra) -> int:
    overrides = {**mnist_overrides(args.mnist_dir), **parse_overrides(extra)} if args.mnist_dir else parse_overrides(extra)
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    cfg = parse_config(text, overrides)
    sys.stdout.write(cfg.echo())
    out = Path(args.out or cfg.output) if (args.out or cfg.output) else None
    execute(cfg, out)
    return 0


def cmd_preset(args, extra) -> int:
    overrides = parse_overrides(extra)
    if args.mnist_dir:
        overrides = {**mnist_overrides(args.mnist_dir), **overrides}
    shared = typed_overrides(overrides)
    swept = sorted(set(shared) & {"policy", "lam", "mu", "alpha", "iterations", "seed"})
    if swept:
        raise SimError(f"preset sets {', '.join(swept)} itself; use --iterations/--seed or the run command")
    chosen = preset(args.name, iterations=args.iterations, seed=args.seed, **shared)
    for _, cfg in chosen:
        problems = validate(cfg)
        if problems:
            raise SimError("invalid preset override: " + "; ".join(problems))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for label, cfg in chosen:
        print(f"[{args.name}] {label}")
        execute(cfg, out_dir / f"{label}.csv")
    return 0


def cmd_gradcheck(args, extra) -> int:
    worst = max(gradcheck(seed, coords=args.coords) for seed in range(args.seeds))
    ok = worst <= GRADCHECK_TOLERANCE
    print(f"gradcheck max_relative_error={worst:.3e} tolerance={GRADCHECK_TOLERANCE:.0e} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_selftest(args, extra) -> int:
    started = time.time()
    results = []
    cfg = RunConfig(policy="fasgd", lam=4, mu=8, alpha=0.005, iterations=300, seed=7, eval_every=100,
                    train_size=2000, val_size=500)
    train, val = prepare_data(cfg)
    a = Simulation(cfg, train, val).run()
    b = Simulation(cfg, train, val).run()
    results.append(("determinism", a.records == b.records, "two identical runs"))

    params, reference = sync_vs_vanilla(train, val, rounds=100)
    scaled = scale_relative_difference(params, reference)
    per_coord = max_relative_difference(params, reference)
    results.append(("sync-equivalence", scaled <= 1e-12,
                    f"max |difference| / max |theta| {scaled:.2e} (worst single coordinate {per_coord:.2e})"))

    worst = max(gradcheck(seed) for seed in range(5))
    results.append(("gradcheck", worst <= GRADCHECK_TOLERANCE, f"max relative error {worst:.2e}"))

    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    print(f"selftest finished in {time.time() - started:.1f}s")
    return 0 if all(ok for _, ok, _ in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stalesim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one simulation; extra --key value pairs override the config file")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", help="CSV path (defaults to the output key)")
    p.add_argument("--mnist-dir", help="directory holding the MNIST train IDX files")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="run every member of an experiment preset")
    p.add_argument("name", choices=PRESETS)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--iterations", type=int, default=DESK_ITERATIONS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mnist-dir")
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("gradcheck", help="backprop vs central differences on a 6-4-3 MLP")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--coords", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="determinism, sync equivalence and gradient checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if extra and args.command not in ("run", "preset"):
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    try:
        return args.func(args, extra)
    except (SimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
