"""YAML run configuration with strict key checking.

Every mapping in the document is checked against a fixed key set so that a
typo such as ``dleta_slots`` fails loudly with its full key path instead of
silently falling back to a default.  Defaults are 10 us slots, a 5 ms
TXOP, CW 8 and a -82 dBm energy-detection threshold.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .channel_access import Mode, TimingConfig
from .engine import COLLISION_MODES, DeviceConfig
from .metrics import RUN_STATISTICS
from .trace_model import DEFAULT_ED_THRESHOLD_DBM, REGIME_BURST_SLOTS, REGIME_DUTY

# iteration ranges of the stadium recording used for each occupancy regime
WACA_REGIME_ITERATIONS = {"low": (0, 250), "medium": (250, 500), "high": (500, 750)}
REGIMES = ("low", "medium", "high", "custom")
COMPETITORS = ("none", "slo", "mlo", "conmlo")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


TIMING_KEYS = {f.name for f in dataclasses.fields(TimingConfig)}


@dataclass
class SynthBlock:
    preset: str | None = None
    duty_cycle: float | list[float] | None = None
    mean_busy_burst_slots: float | None = None
    num_channels: int = 6
    num_slots: int = 100_000
    slot_duration_us: int = 10


@dataclass
class TraceBlock:
    path: str | None = None
    format: str | None = None
    iteration_slots: int | None = None
    iterations: tuple[int, int] | None = None
    channels: list[int] | None = None
    synth: SynthBlock | None = None


@dataclass
class SweepBlock:
    mode: list[str] = field(default_factory=lambda: ["conmlo"])
    L: list[int] = field(default_factory=lambda: [2, 4, 6])
    delta_slots: list[int] | None = None
    regime: list[str] | None = None


@dataclass
class FairnessBlock:
    competitors: list[str] = field(default_factory=lambda: list(COMPETITORS))


@dataclass
class RunConfig:
    trace: TraceBlock
    devices: list[DeviceConfig]
    timing: TimingConfig = field(default_factory=TimingConfig)
    regime: str = "custom"
    ed_threshold_dbm: float = DEFAULT_ED_THRESHOLD_DBM
    duration_slots: int | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "results"
    collision_mode: str = "permissive"
    run_statistic: str = "max"
    threads: int = 1
    sweep: SweepBlock = field(default_factory=SweepBlock)
    fairness: FairnessBlock = field(default_factory=FairnessBlock)
    source: Path | None = None

    def with_overrides(self, **kw) -> "RunConfig":
        """Apply command-line flags; ``None`` values leave the config untouched."""
        changes = {k: v for k, v in kw.items() if v is not None and k != "bo_exclusive"}
        cfg = dataclasses.replace(self, **changes)
        if kw.get("bo_exclusive"):
            cfg.timing = dataclasses.replace(cfg.timing, bo_exclusive=True)
            cfg.devices = [dataclasses.replace(d, timing=dataclasses.replace(d.timing, bo_exclusive=True))
                           for d in cfg.devices]
        return cfg


def _check_keys(doc, allowed, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(path, f"expected a mapping, got {type(doc).__name__}")
    for key in doc:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(where, f"unknown key {key!r}")


def _typed(value, kind, path):
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(path, f"expected {kind.__name__}, got {value!r}")
    return value


def _int_list(value, path) -> list[int]:
    if isinstance(value, int) and not isinstance(value, bool):
        return [value]
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list of integers")
    return [_typed(v, int, f"{path}[{i}]") for i, v in enumerate(value)]


def _choice(value, options, path):
    value = str(value).lower()
    if value not in options:
        raise ConfigError(path, f"{value!r} is not one of {list(options)}")
    return value


def parse_timing(doc, path: str, base: TimingConfig | None = None) -> TimingConfig:
    doc = doc or {}
    _check_keys(doc, TIMING_KEYS, path)
    fields = {f.name: f.type for f in dataclasses.fields(TimingConfig)}
    values = {}
    for k, v in doc.items():
        kind = bool if fields[k] == "bool" else int
        values[k] = _typed(v, kind, f"{path}.{k}")
    try:
        return dataclasses.replace(base or TimingConfig(), **values)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _parse_synth(doc, path) -> SynthBlock:
    _check_keys(doc, {f.name for f in dataclasses.fields(SynthBlock)}, path)
    block = SynthBlock()
    if "preset" in doc:
        block.preset = _choice(doc["preset"], REGIMES, f"{path}.preset")
    if "duty_cycle" in doc:
        d = doc["duty_cycle"]
        block.duty_cycle = ([_typed(x, float, f"{path}.duty_cycle[{i}]") for i, x in enumerate(d)]
                            if isinstance(d, list) else _typed(d, float, f"{path}.duty_cycle"))
    if "mean_busy_burst_slots" in doc:
        block.mean_busy_burst_slots = _typed(doc["mean_busy_burst_slots"], float, f"{path}.mean_busy_burst_slots")
    for k in ("num_channels", "num_slots", "slot_duration_us"):
        if k in doc:
            setattr(block, k, _typed(doc[k], int, f"{path}.{k}"))
    if block.preset in (None, "custom") and block.duty_cycle is None and block.preset is not None:
        raise ConfigError(f"{path}.duty_cycle", "custom preset needs duty_cycle")
    return block


def _parse_trace(doc, path) -> TraceBlock:
    _check_keys(doc, {f.name for f in dataclasses.fields(TraceBlock)}, path)
    block = TraceBlock()
    if ("path" in doc) == ("synth" in doc):
        raise ConfigError(path, "exactly one of 'path' or 'synth' is required")
    if "path" in doc:
        block.path = _typed(doc["path"], str, f"{path}.path")
    if "format" in doc:
        block.format = _choice(doc["format"], ("binary", "csv"), f"{path}.format")
    if "iteration_slots" in doc:
        block.iteration_slots = _typed(doc["iteration_slots"], int, f"{path}.iteration_slots")
    if "iterations" in doc:
        it = _int_list(doc["iterations"], f"{path}.iterations")
        if len(it) != 2 or not 0 <= it[0] < it[1]:
            raise ConfigError(f"{path}.iterations", "expected [start, stop) with 0 <= start < stop")
        block.iterations = (it[0], it[1])
    if "channels" in doc:
        block.channels = _int_list(doc["channels"], f"{path}.channels")
    if "synth" in doc:
        block.synth = _parse_synth(doc["synth"] or {}, f"{path}.synth")
    return block


def _parse_device(doc, path, timing: TimingConfig) -> DeviceConfig:
    _check_keys(doc, {"mode", "links", "timing"}, path)
    if "mode" not in doc or "links" not in doc:
        raise ConfigError(path, "device needs 'mode' and 'links'")
    mode = _choice(doc["mode"], [m.value for m in Mode], f"{path}.mode")
    links = _int_list(doc["links"], f"{path}.links")
    try:
        return DeviceConfig(Mode(mode), tuple(links), parse_timing(doc.get("timing"), f"{path}.timing", timing))
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


TOP_KEYS = {"trace", "devices", "timing", "regime", "ed_threshold_dbm", "duration_slots",
            "seeds", "out", "collision_mode", "run_statistic", "threads", "sweep", "fairness"}


def parse_config(doc, source: Path | None = None) -> RunConfig:
    _check_keys(doc, TOP_KEYS, "")
    if "trace" not in doc:
        raise ConfigError("trace", "missing required key")
    timing = parse_timing(doc.get("timing"), "timing")
    devices = [_parse_device(d, f"devices[{i}]", timing) for i, d in enumerate(doc.get("devices") or [])]
    cfg = RunConfig(trace=_parse_trace(doc["trace"], "trace"), devices=devices, timing=timing, source=source)
    if "regime" in doc:
        cfg.regime = _choice(doc["regime"], REGIMES, "regime")
    if "ed_threshold_dbm" in doc:
        cfg.ed_threshold_dbm = _typed(doc["ed_threshold_dbm"], float, "ed_threshold_dbm")
    if "duration_slots" in doc:
        cfg.duration_slots = _typed(doc["duration_slots"], int, "duration_slots")
    if "seeds" in doc:
        cfg.seeds = _int_list(doc["seeds"], "seeds")
    if "out" in doc:
        cfg.out = _typed(doc["out"], str, "out")
    if "collision_mode" in doc:
        cfg.collision_mode = _choice(doc["collision_mode"], COLLISION_MODES, "collision_mode")
    if "run_statistic" in doc:
        cfg.run_statistic = _choice(doc["run_statistic"], RUN_STATISTICS, "run_statistic")
    if "threads" in doc:
        cfg.threads = _typed(doc["threads"], int, "threads")
    if "sweep" in doc:
        s = doc["sweep"] or {}
        _check_keys(s, {"mode", "L", "delta_slots", "regime"}, "sweep")
        sweep = SweepBlock()
        if "mode" in s:
            sweep.mode = [_choice(m, [x.value for x in Mode], f"sweep.mode[{i}]")
                          for i, m in enumerate(s["mode"] if isinstance(s["mode"], list) else [s["mode"]])]
        if "L" in s:
            sweep.L = _int_list(s["L"], "sweep.L")
        if "delta_slots" in s:
            sweep.delta_slots = _int_list(s["delta_slots"], "sweep.delta_slots")
        if "regime" in s:
            sweep.regime = [_choice(r, REGIMES, f"sweep.regime[{i}]")
                            for i, r in enumerate(s["regime"] if isinstance(s["regime"], list) else [s["regime"]])]
        cfg.sweep = sweep
    if "fairness" in doc:
        f = doc["fairness"] or {}
        _check_keys(f, {"competitors"}, "fairness")
        if "competitors" in f:
            cfg.fairness = FairnessBlock([_choice(c, COMPETITORS, f"fairness.competitors[{i}]")
                                          for i, c in enumerate(f["competitors"])])
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{path}: not valid YAML: {exc}") from None
    if doc is None:
        raise ConfigError("", f"{path}: empty config")
    return parse_config(doc, source=path)


def resolve_path(cfg: RunConfig, p: str) -> Path:
    """Relative paths in a config file are taken relative to that file."""
    path = Path(p)
    if not path.is_absolute() and cfg.source is not None:
        path = cfg.source.parent / path
    return path


def synth_duty(block: SynthBlock, regime: str):
    if block.duty_cycle is not None:
        return block.duty_cycle
    name = block.preset if block.preset not in (None, "custom") else regime
    if name not in REGIME_DUTY:
        raise ConfigError("trace.synth", f"no duty_cycle and no preset for regime {name!r}")
    return REGIME_DUTY[name]


def synth_burst(block: SynthBlock) -> float:
    return REGIME_BURST_SLOTS if block.mean_busy_burst_slots is None else block.mean_busy_burst_slots
