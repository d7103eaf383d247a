"""``sim`` command line: run, sweep, synth and fairness."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .config import REGIMES, ConfigError, load_config
from .engine import COLLISION_MODES, ScenarioError
from .experiments import fairness, run_config, sweep
from .metrics import RUN_STATISTICS
from .trace_model import (
    DEFAULT_ED_THRESHOLD_DBM,
    REGIME_BURST_SLOTS,
    REGIME_DUTY,
    SynthParams,
    derive_occupancy,
    save_trace,
    synth_trace,
)

AXIS_NAMES = {"mode": "mode", "L": "L", "l": "L", "delta": "delta_slots",
              "delta_slots": "delta_slots", "regime": "regime"}


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, action="append", default=None,
                   help="seed to run (repeatable); replaces the config's seed list")
    g.add_argument("--out", default=None, help="output directory")
    g.add_argument("--threads", type=int, default=None, help="worker processes for sweeps")
    g.add_argument("--collision-mode", choices=COLLISION_MODES, default=None)
    g.add_argument("--bo-exclusive", action="store_true",
                   help="draw backoff from [0, CW-1] instead of [0, CW]")
    g.add_argument("--run-statistic", choices=RUN_STATISTICS, default=None,
                   help="per-trace maximum run (max) or every run pooled (all) in the N_ca,cont CDF")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="sim", parents=[common],
                                     description="Trace-driven SLO / MLO / ConMLO channel access simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run the configured scenario for every seed")
    p.add_argument("config")

    p = sub.add_parser("sweep", parents=[common], help="run the Cartesian product of sweep axes")
    p.add_argument("config")
    p.add_argument("--axis", action="append", default=[], metavar="NAME=V1,V2",
                   help="override a sweep axis: mode, L, delta_slots or regime")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic on/off trace")
    p.add_argument("--preset", choices=REGIMES, default="medium")
    p.add_argument("--duty", type=float, action="append", default=None,
                   help="duty cycle (once for all channels or once per channel); required for custom")
    p.add_argument("--burst", type=float, default=None, help="mean busy burst in slots")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--slots", type=int, default=100_000)
    p.add_argument("--slot-us", type=int, default=10)
    p.add_argument("--format", choices=("binary", "csv"), default=None)
    p.add_argument("--ed-threshold", type=float, default=DEFAULT_ED_THRESHOLD_DBM)
    p.add_argument("path", nargs="?", default=None,
                   help="output file (default: <out>/<preset>.otrc)")

    p = sub.add_parser("fairness", parents=[common], help="probe airtime against each competitor type")
    p.add_argument("config")
    return parser


def _overrides(args) -> dict:
    return {"seeds": args.seed, "out": args.out, "threads": args.threads,
            "collision_mode": args.collision_mode, "run_statistic": args.run_statistic,
            "bo_exclusive": args.bo_exclusive}


def _apply_axes(cfg, axes: list[str]):
    sweep_block = dataclasses.replace(cfg.sweep)
    for item in axes:
        name, _, values = item.partition("=")
        if name not in AXIS_NAMES or not values:
            raise ConfigError(f"--axis {item}", f"expected NAME=V1,V2 with NAME in {sorted(set(AXIS_NAMES.values()))}")
        field = AXIS_NAMES[name]
        items = [v.strip() for v in values.split(",") if v.strip()]
        if field in ("L", "delta_slots"):
            try:
                items = [int(v) for v in items]
            except ValueError:
                raise ConfigError(f"--axis {item}", "values must be integers") from None
        elif field == "mode":
            items = [v.lower() for v in items]
            bad = [v for v in items if v not in ("slo", "mlo", "conmlo")]
            if bad:
                raise ConfigError(f"--axis {item}", f"unknown modes {bad}")
        else:
            bad = [v for v in items if v not in REGIMES]
            if bad:
                raise ConfigError(f"--axis {item}", f"unknown regimes {bad}")
        setattr(sweep_block, field, items)
    return dataclasses.replace(cfg, sweep=sweep_block)


def cmd_synth(args) -> int:
    if args.preset == "custom" and not args.duty:
        raise ConfigError("--duty", "custom preset needs --duty")
    duty = REGIME_DUTY.get(args.preset) if not args.duty else (
        args.duty[0] if len(args.duty) == 1 else tuple(args.duty))
    burst = REGIME_BURST_SLOTS if args.burst is None else args.burst
    seed = args.seed[0] if args.seed else 0
    params = SynthParams(duty, burst, args.channels, args.slots, seed, args.slot_us)
    trace = synth_trace(params)
    path = Path(args.path) if args.path else Path(args.out or ".") / f"{args.preset}.otrc"
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        save_trace(trace, path, args.format)
    except OSError as exc:
        print(f"error: cannot write {path}: {exc}", file=sys.stderr)
        return 1
    busy = derive_occupancy(trace, args.ed_threshold).base
    print(f"wrote {path}: {trace.num_channels} channels x {trace.num_slots} slots, seed {seed}")
    for ch, frac in enumerate(busy.mean(axis=1)):
        print(f"channel {ch}: empirical duty {frac:.4f}")
    print(f"all channels: empirical duty {float(np.mean(busy)):.4f}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        cfg = load_config(args.config).with_overrides(**_overrides(args))
        if args.command == "run":
            run_config(cfg)
            return 0
        if args.command == "sweep":
            cfg = _apply_axes(cfg, args.axis)
            _, failures = sweep(cfg)
            return 1 if failures else 0
        if args.command == "fairness":
            fairness(cfg)
            return 0
    except (ConfigError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
