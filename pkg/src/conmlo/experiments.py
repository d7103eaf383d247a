"""Batch runs behind the command line: single scenarios, sweeps and fairness.

A *unit* is one (trace, seed) pair.  Synthetic traces are regenerated from
the seed, so every seed is a fresh one-second iteration; recorded traces are
cut into iterations and every iteration is run once per seed.  Each unit
writes its event log to disk before its metrics are aggregated, so every
CSV row can be traced back to an ``events.jsonl`` file.
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .channel_access import Mode
from .config import (
    WACA_REGIME_ITERATIONS,
    ConfigError,
    RunConfig,
    resolve_path,
    synth_burst,
    synth_duty,
)
from .engine import DeviceConfig, RunLog, Scenario, run
from .metrics import AggregateReport, CellKey, RunMetrics, aggregate, compute_metrics
from .trace_model import RssiTrace, SynthParams, load_trace, synth_trace

log = logging.getLogger(__name__)

FAIRNESS_COLUMNS = ("iteration", "competitor", "airtime")


@dataclass(frozen=True)
class Unit:
    seed: int
    iteration: int | None = None  # index into a recorded trace; None for synthetic

    @property
    def dirname(self) -> str:
        if self.iteration is None:
            return f"seed{self.seed}"
        return f"seed{self.seed}/iter{self.iteration:04d}"


def units(cfg: RunConfig, regime: str) -> list[Unit]:
    if cfg.trace.synth is not None:
        return [Unit(s) for s in cfg.seeds]
    its = _iteration_range(cfg, regime)
    return [Unit(s, i) for i in range(*its) for s in cfg.seeds]


def _iteration_range(cfg: RunConfig, regime: str) -> tuple[int, int]:
    if cfg.trace.iterations is not None:
        return cfg.trace.iterations
    if cfg.trace.iteration_slots is not None and regime in WACA_REGIME_ITERATIONS:
        return WACA_REGIME_ITERATIONS[regime]
    return (0, _n_iterations(cfg))


def _n_iterations(cfg: RunConfig) -> int:
    trace = load_trace(resolve_path(cfg, cfg.trace.path), cfg.trace.format)
    if cfg.trace.iteration_slots is None:
        return 1
    return trace.num_slots // cfg.trace.iteration_slots


def unit_trace(cfg: RunConfig, regime: str, unit: Unit) -> RssiTrace:
    tb = cfg.trace
    if tb.synth is not None:
        sb = tb.synth
        params = SynthParams(
            duty_cycle=tuple(sb.duty_cycle) if isinstance(sb.duty_cycle, list) else synth_duty(sb, regime),
            mean_busy_burst_slots=synth_burst(sb),
            num_channels=sb.num_channels,
            num_slots=sb.num_slots,
            seed=unit.seed,
            slot_duration_us=sb.slot_duration_us,
        )
        trace = synth_trace(params)
    else:
        trace = load_trace(resolve_path(cfg, tb.path), tb.format)
        if tb.iteration_slots is not None:
            n = tb.iteration_slots
            if (unit.iteration + 1) * n > trace.num_slots:
                raise ConfigError("trace.iterations", f"iteration {unit.iteration} beyond end of trace")
            trace = trace.window(unit.iteration * n, (unit.iteration + 1) * n)
    if tb.channels is not None:
        bad = [c for c in tb.channels if not 0 <= c < trace.num_channels]
        if bad:
            raise ConfigError("trace.channels", f"link index out of range: {bad}")
        trace = trace.select_channels(tb.channels)
    return trace


def run_unit(cfg: RunConfig, devices, regime: str, unit: Unit, out_dir: Path) -> tuple[RunLog, list[RunMetrics]]:
    trace = unit_trace(cfg, regime, unit)
    scenario = Scenario(trace, tuple(devices), cfg.ed_threshold_dbm, cfg.duration_slots,
                        unit.seed, regime, cfg.collision_mode)
    runlog = run(scenario, trace)
    metrics = [compute_metrics(runlog, i) for i in range(len(devices))]
    d = out_dir / unit.dirname
    d.mkdir(parents=True, exist_ok=True)
    runlog.write_jsonl(d / "events.jsonl")
    doc = runlog.summary()
    doc["iteration"] = unit.iteration
    doc["regime"] = regime
    doc["devices"] = [{"mode": dev.mode.value, "links": list(dev.links),
                       "timing": dataclasses.asdict(dev.timing)} for dev in devices]
    doc["final_states"] = [_state_doc(s) for s in runlog.final_states]
    doc["metrics"] = [dataclasses.asdict(m) for m in metrics]
    (d / "run.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return runlog, metrics


def _state_doc(state) -> dict:
    return {
        "mode": state.mode.value,
        "n_tx": state.n_tx,
        "pending_tx": list(state.pending_tx) if state.pending_tx else None,
        "active_set": sorted(state.active_set),
        "per_link": {str(l): {"state": ls.state.value, "backoff": ls.backoff,
                              "idle_streak_slots": ls.idle_streak_slots,
                              "tx_started_at": ls.tx_started_at}
                     for l, ls in state.per_link.items()},
    }


def _pmap(fn, jobs, threads: int):
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


# --------------------------------------------------------------------------
# single scenario
# --------------------------------------------------------------------------

def device_label(devices, i: int) -> str:
    mode = devices[i].mode.value
    return mode if len(devices) == 1 else f"dev{i}:{mode}"


def run_config(cfg: RunConfig, echo=print) -> AggregateReport:
    if not cfg.devices:
        raise ConfigError("devices", "at least one device is required")
    out = Path(cfg.out)
    items = []
    for unit in units(cfg, cfg.regime):
        runlog, metrics = run_unit(cfg, cfg.devices, cfg.regime, unit, out)
        parts = []
        for i, m in enumerate(metrics):
            dev = cfg.devices[i]
            key = CellKey(cfg.regime, len(dev.links), device_label(cfg.devices, i), _delta(dev))
            items.append((key, m))
            parts.append(f"{key.mode} n_tx={m.n_tx} airtime={m.airtime:.4f} "
                         f"max_run={m.max_run} collisions={m.collisions}")
        where = f"seed={unit.seed}" + ("" if unit.iteration is None else f" iter={unit.iteration}")
        echo(f"{where} " + " | ".join(parts))
    report = aggregate(items, cfg.run_statistic)
    report.write_csvs(out)
    return report


def _delta(dev: DeviceConfig) -> int:
    return dev.timing.delta_slots if dev.mode is Mode.CONMLO else 0


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    mode: str
    L: int
    delta_slots: int
    regime: str

    @property
    def dirname(self) -> str:
        return f"{self.mode}_L{self.L}_D{self.delta_slots}_{self.regime}"

    @property
    def key(self) -> CellKey:
        return CellKey(self.regime, self.L, self.mode, self.delta_slots)


def sweep_cells(cfg: RunConfig, warn=log.warning) -> list[Cell]:
    """Cartesian product of the sweep axes.

    SLO cells with more than one link are dropped with a warning; if that
    removes every SLO cell an ``L=1`` SLO baseline is kept instead.  Only
    ConMLO depends on ``delta_slots``, so the other modes get a single
    ``delta_slots=0`` cell per (L, regime).
    """
    axes = cfg.sweep
    regimes = axes.regime or [cfg.regime]
    deltas = axes.delta_slots or [cfg.timing.delta_slots]
    cells: list[Cell] = []
    for regime, mode, L, delta in itertools.product(regimes, axes.mode, axes.L, deltas):
        if L < 1:
            raise ConfigError("sweep.L", f"L must be >= 1, got {L}")
        if mode == "slo" and L > 1:
            warn(f"skipping SLO with L={L}: SLO uses a single link")
            L = 1 if 1 not in axes.L else None
            if L is None:
                continue
        d = delta if mode == "conmlo" else 0
        cell = Cell(mode, L, d, regime)
        if cell not in cells:
            cells.append(cell)
    return cells


def _cell_job(args):
    cfg, cell, unit = args
    timing = dataclasses.replace(cfg.timing, delta_slots=cell.delta_slots) if cell.mode == "conmlo" else cfg.timing
    dev = DeviceConfig(Mode(cell.mode), tuple(range(cell.L)), timing)
    try:
        _, metrics = run_unit(cfg, [dev], cell.regime, unit, Path(cfg.out) / cell.dirname)
    except Exception as exc:  # reported per cell; the remaining cells still run
        return cell, unit, None, f"{type(exc).__name__}: {exc}"
    return cell, unit, metrics[0], None


def sweep(cfg: RunConfig, echo=print, warn=log.warning) -> tuple[AggregateReport, dict[Cell, str]]:
    cells = sweep_cells(cfg, warn)
    jobs = [(cfg, cell, u) for cell in cells for u in units(cfg, cell.regime)]
    results = _pmap(_cell_job, jobs, cfg.threads)
    failures: dict[Cell, str] = {}
    per_cell: dict[Cell, list] = {c: [] for c in cells}
    for cell, unit, metrics, err in results:
        if err is not None:
            failures.setdefault(cell, err)
        else:
            per_cell[cell].append((cell.key, metrics))
    merged = AggregateReport(run_statistic=cfg.run_statistic)
    for cell in cells:
        if cell in failures:
            echo(f"FAILED {cell.dirname}: {failures[cell]}")
            continue
        report = aggregate(per_cell[cell], cfg.run_statistic)
        report.write_csvs(Path(cfg.out) / cell.dirname)
        summary = report[cell.key]
        echo(f"{cell.dirname}: mean_airtime={summary.mean_airtime:.4f} traces={summary.n_traces} "
             f"P(max_run={_max_run(cfg)})={1 - summary.cdf_at(_max_run(cfg) - 1):.3f}")
        merged = merged.merge(report)
    merged.write_csvs(cfg.out)
    return merged, failures


def _max_run(cfg: RunConfig) -> int:
    T = cfg.duration_slots
    if T is None:
        T = cfg.trace.synth.num_slots if cfg.trace.synth else (cfg.trace.iteration_slots or 0)
    return T // cfg.timing.txop_slots


# --------------------------------------------------------------------------
# fairness
# --------------------------------------------------------------------------

def competitor_devices(cfg: RunConfig, kind: str) -> tuple[str, list[DeviceConfig]]:
    probe, template = cfg.devices
    if kind == "none":
        return "none", [probe]
    if kind == "slo":
        return "slo", [probe, DeviceConfig(Mode.SLO, (probe.links[0],), template.timing)]
    dev = DeviceConfig(Mode(kind), template.links, template.timing)
    return f"{kind}_L{len(template.links)}", [probe, dev]


def _fairness_job(args):
    cfg, kind, unit = args
    label, devices = competitor_devices(cfg, kind)
    _, metrics = run_unit(cfg, devices, cfg.regime, unit, Path(cfg.out) / f"vs_{label}")
    return label, unit, metrics


def fairness(cfg: RunConfig, echo=print) -> list[tuple[int, str, float]]:
    """Probe airtime against each competitor type on identical traces and seeds."""
    if len(cfg.devices) != 2:
        raise ConfigError("devices", f"fairness needs exactly one probe and one competitor, got {len(cfg.devices)} devices")
    us = units(cfg, cfg.regime)
    jobs = [(cfg, kind, u) for kind in cfg.fairness.competitors for u in us]
    rows = []
    for label, unit, metrics in _pmap(_fairness_job, jobs, cfg.threads):
        rows.append((us.index(unit), label, metrics[0].airtime))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "fairness.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FAIRNESS_COLUMNS)
        for it, label, air in rows:
            w.writerow([it, label, repr(air)])
    for kind in cfg.fairness.competitors:
        label = competitor_devices(cfg, kind)[0]
        vals = [a for _, l, a in rows if l == label]
        echo(f"probe {cfg.devices[0].mode.value} vs {label}: mean airtime {sum(vals) / len(vals):.4f} over {len(vals)} iterations")
    return rows
