"""Multi-channel RSSI traces, binary occupancy and transmission write-back.

A trace is a ``channels x slots`` matrix of RSSI samples in dBm.  Channel
access only ever looks at the binary occupancy obtained by comparing each
sample against an energy-detection threshold; simulated transmissions are
layered on top of that occupancy without touching the loaded samples.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"OTRC"
VERSION = 1
# magic, version u16, num_channels u32, num_slots u64, slot_duration_us u32
_HEADER = struct.Struct("<4sHIQI")

BUSY_RSSI_DBM = -60.0
IDLE_RSSI_DBM = -100.0
DEFAULT_ED_THRESHOLD_DBM = -82.0


class TraceFormatError(ValueError):
    """Raised when a trace file does not follow the documented layout."""


@dataclass(frozen=True)
class RssiTrace:
    samples: np.ndarray  # float32, shape (num_channels, num_slots)
    slot_duration_us: int = 10

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 2:
            raise ValueError(f"samples must be 2-D, got shape {samples.shape}")
        if self.slot_duration_us <= 0:
            raise ValueError("slot_duration_us must be positive")
        for ch, row in enumerate(samples):
            bad = ~np.isfinite(row)
            if bad.any():
                raise ValueError(f"non-finite RSSI at channel {ch}, slot {int(np.argmax(bad))}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_slots(self) -> int:
        return self.samples.shape[1]

    def select_channels(self, channels: Sequence[int]) -> "RssiTrace":
        return RssiTrace(self.samples[list(channels)], self.slot_duration_us)

    def window(self, start: int, stop: int) -> "RssiTrace":
        return RssiTrace(self.samples[:, start:stop], self.slot_duration_us)

    def split(self, slots_per_iteration: int) -> list["RssiTrace"]:
        """Cut the trace into consecutive equal-length iterations (tail dropped)."""
        n = self.num_slots // slots_per_iteration
        return [
            self.window(i * slots_per_iteration, (i + 1) * slots_per_iteration)
            for i in range(n)
        ]


@dataclass
class OccupancyOverlay:
    """Binary occupancy of a trace plus simulated-transmission write-back.

    ``base`` comes from the trace and is never modified.  Injected
    transmissions are stored in one layer per owner so that a device can be
    given a view of the channel that leaves out its own activity.
    """

    base: np.ndarray  # bool, shape (num_channels, num_slots)
    layers: dict = field(default_factory=dict)

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=bool)
        self.base.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.base.shape

    @property
    def num_channels(self) -> int:
        return self.base.shape[0]

    @property
    def num_slots(self) -> int:
        return self.base.shape[1]

    @property
    def overlay(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        for layer in self.layers.values():
            out |= layer
        return out

    @property
    def effective(self) -> np.ndarray:
        return self.base | self.overlay

    def busy(self, channel: int, slot: int, exclude=None) -> bool:
        """Effective occupancy of one cell, ignoring the layer of ``exclude``."""
        if self.base[channel, slot]:
            return True
        return any(
            layer[channel, slot]
            for owner, layer in self.layers.items()
            if owner != exclude
        )

    def inject(self, link: int, start_slot: int, duration_slots: int, owner=0):
        """Mark ``[start_slot, start_slot + duration_slots)`` busy on ``link``.

        The interval is clipped at the end of the trace.
        """
        if not 0 <= link < self.num_channels:
            raise IndexError(f"link {link} out of range for {self.num_channels} channels")
        if start_slot < 0 or duration_slots < 0:
            raise ValueError("start_slot and duration_slots must be non-negative")
        layer = self.layers.get(owner)
        if layer is None:
            layer = self.layers[owner] = np.zeros(self.shape, dtype=bool)
        layer[link, start_slot:min(start_slot + duration_slots, self.num_slots)] = True
        return self

    def clear(self, link: int, from_slot: int, owner=0):
        """Drop ``owner``'s occupancy on ``link`` from ``from_slot`` onwards."""
        layer = self.layers.get(owner)
        if layer is not None:
            layer[link, from_slot:] = False
        return self


def derive_occupancy(trace: RssiTrace, ed_threshold_dbm: float = DEFAULT_ED_THRESHOLD_DBM) -> OccupancyOverlay:
    # busy side of the threshold is inclusive
    return OccupancyOverlay(trace.samples >= ed_threshold_dbm)


def inject_transmission(overlay: OccupancyOverlay, link: int, start_slot: int,
                        duration_slots: int, owner=0) -> OccupancyOverlay:
    return overlay.inject(link, start_slot, duration_slots, owner=owner)


# --------------------------------------------------------------------------
# synthetic traces
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthParams:
    duty_cycle: float | tuple[float, ...] = 0.4
    mean_busy_burst_slots: float = 300.0
    num_channels: int = 6
    num_slots: int = 100_000
    seed: int = 0
    slot_duration_us: int = 10

    def __post_init__(self):
        if isinstance(self.duty_cycle, (list, tuple)):
            object.__setattr__(self, "duty_cycle", tuple(float(d) for d in self.duty_cycle))
            if len(self.duty_cycle) != self.num_channels:
                raise ValueError(
                    f"{len(self.duty_cycle)} duty cycles given for {self.num_channels} channels"
                )
        for d in self.duty_cycles:
            if not 0.0 <= d <= 1.0:
                raise ValueError(f"duty_cycle {d} outside [0, 1]")
        if self.mean_busy_burst_slots < 1:
            raise ValueError("mean_busy_burst_slots must be >= 1")
        if self.num_channels < 1 or self.num_slots < 1:
            raise ValueError("num_channels and num_slots must be >= 1")

    @property
    def duty_cycles(self) -> tuple[float, ...]:
        if isinstance(self.duty_cycle, tuple):
            return self.duty_cycle
        return (float(self.duty_cycle),) * self.num_channels


REGIME_DUTY = {"low": 0.10, "medium": 0.40, "high": 0.70}
REGIME_BURST_SLOTS = 100


def preset(regime: str, num_channels: int = 6, num_slots: int = 100_000, seed: int = 0) -> SynthParams:
    if regime not in REGIME_DUTY:
        raise ValueError(f"unknown regime {regime!r}; expected one of {sorted(REGIME_DUTY)}")
    return SynthParams(REGIME_DUTY[regime], REGIME_BURST_SLOTS, num_channels, num_slots, seed)


def _onoff_channel(rng: np.random.Generator, duty: float, burst: float, n: int) -> np.ndarray:
    if duty <= 0.0:
        return np.zeros(n, dtype=bool)
    if duty >= 1.0:
        return np.ones(n, dtype=bool)
    p_busy_idle = 1.0 / burst
    p_idle_busy = duty / ((1.0 - duty) * burst)
    if p_idle_busy > 1.0:
        raise ValueError(
            f"duty_cycle {duty} unreachable with mean burst {burst} slots "
            f"(idle->busy probability {p_idle_busy:.3f} > 1)"
        )
    if p_idle_busy <= 0.0:  # duty so small that it underflows
        return np.zeros(n, dtype=bool)
    busy = rng.random() < duty  # start from the stationary distribution
    out = np.empty(n, dtype=bool)
    pos = 0
    # sojourn times of a two-state chain are geometric; draw them in blocks
    chunk = max(16, int(2 * n / (burst + 1.0 / p_idle_busy)) + 16)
    while pos < n:
        busy_runs = rng.geometric(p_busy_idle, chunk)
        idle_runs = rng.geometric(p_idle_busy, chunk)
        first, second = (busy_runs, idle_runs) if busy else (idle_runs, busy_runs)
        runs = np.empty(2 * chunk, dtype=np.int64)
        runs[0::2] = first
        runs[1::2] = second
        # a sojourn longer than the window is cut at the window anyway
        np.clip(runs, 1, n - pos, out=runs)
        values = np.empty(2 * chunk, dtype=bool)
        values[0::2] = busy
        values[1::2] = not busy
        block = np.repeat(values, runs)
        take = min(len(block), n - pos)
        out[pos:pos + take] = block[:take]
        pos += take
    return out


def synth_trace(params: SynthParams) -> RssiTrace:
    """Independent two-state on/off chain per channel, busy at -60 dBm, idle at -100 dBm."""
    children = np.random.SeedSequence(params.seed).spawn(params.num_channels)
    busy = np.vstack([
        _onoff_channel(np.random.default_rng(ss), d, params.mean_busy_burst_slots, params.num_slots)
        for ss, d in zip(children, params.duty_cycles)
    ])
    samples = np.where(busy, BUSY_RSSI_DBM, IDLE_RSSI_DBM).astype(np.float32)
    return RssiTrace(samples, params.slot_duration_us)


def constant_trace(num_channels: int, num_slots: int, busy: bool, slot_duration_us: int = 10) -> RssiTrace:
    value = BUSY_RSSI_DBM if busy else IDLE_RSSI_DBM
    return RssiTrace(np.full((num_channels, num_slots), value, dtype=np.float32), slot_duration_us)


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def save_trace(trace: RssiTrace, path, format: str | None = None) -> Path:
    path = Path(path)
    format = format or _format_from_suffix(path)
    if format == "binary":
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, trace.num_channels, trace.num_slots,
                                  trace.slot_duration_us))
            fh.write(np.ascontiguousarray(trace.samples, dtype="<f4").tobytes())
    elif format == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["channel", "slot", "rssi_dbm"])
            for ch in range(trace.num_channels):
                for slot, value in enumerate(trace.samples[ch].tolist()):
                    w.writerow([ch, slot, repr(value)])
    else:
        raise ValueError(f"unknown trace format {format!r}")
    return path


def load_trace(path, format: str | None = None, slot_duration_us: int = 10) -> RssiTrace:
    """Read a trace written in the binary (``OTRC``) or CSV layout.

    CSV files carry no slot duration, so ``slot_duration_us`` is used for
    them; binary files take it from the header.
    """
    path = Path(path)
    format = format or _format_from_suffix(path)
    if format == "binary":
        return _load_binary(path)
    if format == "csv":
        return _load_csv(path, slot_duration_us)
    raise ValueError(f"unknown trace format {format!r}")


def _format_from_suffix(path: Path) -> str:
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def _load_binary(path: Path) -> RssiTrace:
    size = path.stat().st_size
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise TraceFormatError(f"{path}: header truncated at byte {len(head)} (need {_HEADER.size})")
    magic, version, n_ch, n_slots, slot_us = _HEADER.unpack(head)
    if magic != MAGIC:
        raise TraceFormatError(f"{path}: bad magic {magic!r} at byte 0")
    if version != VERSION:
        raise TraceFormatError(f"{path}: unsupported version {version} at byte 4")
    if slot_us == 0:
        raise TraceFormatError(f"{path}: slot_duration_us is 0 at byte 18")
    if n_ch == 0 or n_slots == 0:
        raise TraceFormatError(f"{path}: empty dimensions {n_ch} x {n_slots} at byte 6")
    expected = n_ch * n_slots * 4
    payload = size - _HEADER.size
    if payload < expected:
        raise TraceFormatError(
            f"{path}: truncated payload, {payload} bytes after header at byte "
            f"{_HEADER.size}, expected {expected}"
        )
    if payload > expected:
        raise TraceFormatError(
            f"{path}: {payload - expected} trailing bytes at byte {_HEADER.size + expected}"
        )
    # memory-mapped: full WACA-style recordings run to gigabytes
    samples = np.memmap(path, dtype="<f4", mode="r", offset=_HEADER.size, shape=(n_ch, n_slots))
    for ch in range(n_ch):
        bad = ~np.isfinite(samples[ch])
        if bad.any():
            flat = ch * n_slots + int(np.argmax(bad))
            raise TraceFormatError(f"{path}: non-finite sample at byte {_HEADER.size + 4 * flat}")
    return RssiTrace(samples, int(slot_us))


def _load_csv(path: Path, slot_duration_us: int) -> RssiTrace:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["channel", "slot", "rssi_dbm"]:
            raise TraceFormatError(f"{path}: row 1: expected header 'channel,slot,rssi_dbm', got {header}")
        cells = {}
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise TraceFormatError(f"{path}: row {row_no}: expected 3 fields, got {len(row)}")
            try:
                ch, slot, value = int(row[0]), int(row[1]), float(row[2])
            except ValueError as exc:
                raise TraceFormatError(f"{path}: row {row_no}: {exc}") from None
            if ch < 0 or slot < 0:
                raise TraceFormatError(f"{path}: row {row_no}: negative index")
            if not math.isfinite(value):
                raise TraceFormatError(f"{path}: row {row_no}: non-finite sample {row[2]!r}")
            if (ch, slot) in cells:
                raise TraceFormatError(f"{path}: row {row_no}: duplicate cell ({ch}, {slot})")
            cells[(ch, slot)] = value
    if not cells:
        raise TraceFormatError(f"{path}: no samples")
    n_ch = max(c for c, _ in cells) + 1
    n_slots = max(s for _, s in cells) + 1
    if len(cells) != n_ch * n_slots:
        missing = next((c, s) for c in range(n_ch) for s in range(n_slots) if (c, s) not in cells)
        raise TraceFormatError(
            f"{path}: dimension mismatch, {len(cells)} samples for {n_ch} x {n_slots} grid;"
            f" no row for channel {missing[0]}, slot {missing[1]}"
        )
    samples = np.empty((n_ch, n_slots), dtype=np.float32)
    for (ch, slot), value in cells.items():
        samples[ch, slot] = value
    return RssiTrace(samples, slot_duration_us)
