"""Mean ConMLO airtime per occupancy regime and number of links.

    python scripts/airtime_table.py --seeds 30 --out results/airtime_table
"""
import argparse
import dataclasses
from pathlib import Path

from conmlo.config import load_config
from conmlo.experiments import sweep

ROOT = Path(__file__).resolve().parents[1]
REGIMES = ("low", "medium", "high")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "regime_sweep.yaml"))
    ap.add_argument("--seeds", type=int, default=30)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--out", default="results/airtime_table")
    args = ap.parse_args()

    cfg = load_config(args.config)
    cfg = dataclasses.replace(cfg, seeds=list(range(args.seeds)), threads=args.threads, out=args.out)
    report, failures = sweep(cfg, echo=lambda *_: None)
    if failures:
        raise SystemExit(f"failed cells: {failures}")
    Ls = sorted(cfg.sweep.L)
    delta = cfg.timing.delta_slots
    print("regime   " + "".join(f"  L={L:<6}" for L in Ls))
    for r in REGIMES:
        row = [report.get((r, L, "conmlo", delta)) for L in Ls]
        print(f"{r:<8} " + "".join(f"  {c.mean_airtime:.4f}  " if c else "  -       " for c in row))
    print(f"CSVs in {args.out}")


if __name__ == "__main__":
    main()
