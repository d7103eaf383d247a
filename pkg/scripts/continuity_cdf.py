"""CDF of the longest run of back-to-back acquisitions and hold-duration histogram.

Prints P(max run >= k) for a few k per cell and the most frequent hold
durations; full distributions are in nca_cdf.csv and holds.csv.

    python scripts/continuity_cdf.py --seeds 50 --run-statistic max
"""
import argparse
import dataclasses
from pathlib import Path

from conmlo.config import load_config
from conmlo.experiments import sweep

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "regime_sweep.yaml"))
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--run-statistic", choices=("max", "all"), default="max")
    ap.add_argument("--out", default="results/continuity")
    args = ap.parse_args()

    cfg = load_config(args.config)
    cfg = dataclasses.replace(cfg, seeds=list(range(args.seeds)), threads=args.threads,
                              out=args.out, run_statistic=args.run_statistic)
    report, failures = sweep(cfg, echo=lambda *_: None)
    if failures:
        raise SystemExit(f"failed cells: {failures}")
    full = cfg.trace.synth.num_slots // cfg.timing.txop_slots if cfg.trace.synth else 200
    marks = (1, 10, 50, 100, full)
    print("cell                     " + "".join(f"  P(>={k:<3})" for k in marks) + "  top holds (ms x count)")
    for key in sorted(report.cells):
        c = report.cells[key]
        probs = "".join(f"  {1 - c.cdf_at(k - 1):8.3f}" for k in marks)
        top = sorted(c.holds, key=lambda h: -h[1])[:3]
        holds = ", ".join(f"{d:g}x{n}" for d, n in top)
        print(f"{key.mode}_L{key.L}_{key.regime:<8}       {probs}  {holds}")
    print(f"CSVs in {args.out}")


if __name__ == "__main__":
    main()
