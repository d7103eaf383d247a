"""Airtime, consecutive-acquisition runs and hold durations, plus CSV reports."""
from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

from .engine import RunLog, TxEvent

RUN_STATISTICS = ("max", "all")

AIRTIME_COLUMNS = ("regime", "L", "mode", "mean_airtime", "n_traces", "delta_slots")
NCA_CDF_COLUMNS = ("regime", "L", "mode", "value", "cum_prob", "delta_slots")
HOLDS_COLUMNS = ("regime", "L", "mode", "duration_ms", "count", "delta_slots")


class IntegrityError(RuntimeError):
    """Event log violates an engine invariant (overlapping or unsorted TXOPs)."""


@dataclass
class RunMetrics:
    airtime: float
    n_tx: int
    continuity_runs: list[int]
    hold_durations_ms: list[float]
    collisions: int = 0
    nominal_airtime: float = 0.0  # n_tx * txop / T, no clipping correction

    @property
    def max_run(self) -> int:
        return max(self.continuity_runs, default=0)


def continuity_runs(events: list[TxEvent]) -> list[list[TxEvent]]:
    """Group events into maximal chains where each starts exactly where the previous ended."""
    chains: list[list[TxEvent]] = []
    for ev in events:
        if chains and chains[-1][-1].end_slot == ev.start_slot:
            chains[-1].append(ev)
        else:
            chains.append([ev])
    return chains


def compute_metrics(log: RunLog, device_id: int = 0, T: int | None = None,
                    txop_slots: int | None = None, slot_us: int | None = None) -> RunMetrics:
    events = log.device_events(device_id)
    timing = log.final_states[device_id].timing
    T = log.duration_slots if T is None else T
    txop_slots = timing.txop_slots if txop_slots is None else txop_slots
    slot_us = timing.slot_us if slot_us is None else slot_us

    for prev, ev in zip(events, events[1:]):
        if ev.start_slot < prev.end_slot:
            raise IntegrityError(
                f"device {device_id}: event at slot {ev.start_slot} overlaps event ending at {prev.end_slot}"
            )
    occupied = sum(ev.duration_slots for ev in events)
    chains = continuity_runs(events)
    return RunMetrics(
        airtime=occupied / T,
        n_tx=len(events),
        continuity_runs=[len(c) for c in chains],
        # actual occupied time, so a TXOP clipped at the horizon counts partially
        hold_durations_ms=[sum(ev.duration_slots for ev in c) * slot_us / 1000.0 for c in chains],
        collisions=log.collisions[device_id],
        nominal_airtime=len(events) * txop_slots / T,
    )


class CellKey(NamedTuple):
    regime: str
    L: int
    mode: str
    delta_slots: int = 0


@dataclass
class CellSummary:
    mean_airtime: float
    n_traces: int
    nca_cdf: list[tuple[int, float]]  # (value, cumulative probability)
    holds: list[tuple[float, int]]  # (duration_ms, count)

    def cdf_at(self, value: int) -> float:
        prob = 0.0
        for v, p in self.nca_cdf:
            if v > value:
                break
            prob = p
        return prob


@dataclass
class AggregateReport:
    cells: dict[CellKey, CellSummary] = field(default_factory=dict)
    run_statistic: str = "max"

    def __getitem__(self, key) -> CellSummary:
        return self.cells[CellKey(*key)]

    def get(self, key) -> CellSummary | None:
        """Summary for ``key`` or None when no trace contributed to it."""
        return self.cells.get(CellKey(*key))

    def merge(self, other: "AggregateReport") -> "AggregateReport":
        return AggregateReport({**self.cells, **other.cells}, self.run_statistic)

    def write_csvs(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        keys = sorted(self.cells)
        air, cdf, holds = out_dir / "airtime.csv", out_dir / "nca_cdf.csv", out_dir / "holds.csv"
        with open(air, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AIRTIME_COLUMNS)
            for k in keys:
                c = self.cells[k]
                w.writerow([k.regime, k.L, k.mode, repr(c.mean_airtime), c.n_traces, k.delta_slots])
        with open(cdf, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(NCA_CDF_COLUMNS)
            for k in keys:
                for value, prob in self.cells[k].nca_cdf:
                    w.writerow([k.regime, k.L, k.mode, value, repr(prob), k.delta_slots])
        with open(holds, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HOLDS_COLUMNS)
            for k in keys:
                for duration, count in self.cells[k].holds:
                    w.writerow([k.regime, k.L, k.mode, repr(duration), count, k.delta_slots])
        return [air, cdf, holds]


def empirical_cdf(values: Iterable[int]) -> list[tuple[int, float]]:
    counts = Counter(values)
    n = sum(counts.values())
    out, acc = [], 0
    for v in sorted(counts):
        acc += counts[v]
        out.append((v, acc / n))
    return out


def aggregate(items: Iterable[tuple[tuple, RunMetrics]], run_statistic: str = "max") -> AggregateReport:
    """Group per-trace metrics by cell key.

    With ``run_statistic="max"`` every trace contributes its longest run to
    the N_ca,cont CDF; with ``"all"`` every run of every trace is pooled.
    Hold durations are always pooled.
    """
    if run_statistic not in RUN_STATISTICS:
        raise ValueError(f"run_statistic must be one of {RUN_STATISTICS}")
    groups: dict[CellKey, list[RunMetrics]] = defaultdict(list)
    for key, m in items:
        groups[CellKey(*key)].append(m)
    report = AggregateReport(run_statistic=run_statistic)
    for key, ms in groups.items():
        if run_statistic == "max":
            values = [m.max_run for m in ms]
        else:
            values = [r for m in ms for r in m.continuity_runs] or [0]
        holds = Counter(h for m in ms for h in m.hold_durations_ms)
        report.cells[key] = CellSummary(
            mean_airtime=math.fsum(m.airtime for m in ms) / len(ms),
            n_traces=len(ms),
            nca_cdf=empirical_cdf(values),
            holds=sorted(holds.items()),
        )
    return report
