"""Airtime of an SLO and an MLO probe against each competitor type.

For every probe (SLO on channel 0, MLO on L channels) and L in {2, 6} the
probe shares a synthetic trace with no competitor, an SLO on its channel,
an MLO(L) and a ConMLO(L) device.

    python scripts/fairness_trends.py --seeds 30 --regime medium
"""
import argparse
import dataclasses
from pathlib import Path

from conmlo.channel_access import Mode
from conmlo.config import load_config
from conmlo.engine import DeviceConfig
from conmlo.experiments import fairness

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "fairness_slo.yaml"))
    ap.add_argument("--seeds", type=int, default=30)
    ap.add_argument("--regime", default="medium", choices=("low", "medium", "high"))
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--out", default="results/fairness")
    args = ap.parse_args()

    base = load_config(args.config)
    competitors = base.fairness.competitors
    print(f"{'probe':<8}{'L':>3}" + "".join(f"{c:>10}" for c in competitors))
    for L in (2, 6):
        links = tuple(range(L))
        template = DeviceConfig(Mode.CONMLO, links, base.timing)
        for probe in (DeviceConfig(Mode.SLO, (0,), base.timing), DeviceConfig(Mode.MLO, links, base.timing)):
            cfg = dataclasses.replace(base, devices=[probe, template], seeds=list(range(args.seeds)),
                                      regime=args.regime, threads=args.threads,
                                      out=f"{args.out}/{probe.mode.value}_L{L}")
            rows = fairness(cfg, echo=lambda *_: None)
            means = {}
            for _, label, air in rows:
                means.setdefault(label.split("_")[0], []).append(air)
            print(f"{probe.mode.value:<8}{L:>3}" + "".join(
                f"{sum(means[c]) / len(means[c]):>10.4f}" for c in competitors))


if __name__ == "__main__":
    main()
