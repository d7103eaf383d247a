"""Slot-driven simulation of one or more devices over a shared trace.

Two engines share the same contract:

* :func:`run_reference` walks every slot and every link through
  :func:`~conmlo.channel_access.step_slot`.  It is slow and literal and is
  kept as the oracle.
* :func:`run` only visits the slots where something happens.  For a link in
  ``SENSE`` the slot at which its backoff expires is a function of the
  occupancy row alone, so it is computed from prefix sums instead of being
  stepped through.  When another device starts transmitting on that channel
  the projection is re-anchored at the next slot.

Devices are resolved simultaneously: all of them see the occupancy as it was
before the current slot, and a transmission started in slot ``t`` becomes
visible to the other devices from ``t + 1``.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .channel_access import (
    DeviceState,
    LinkStatus,
    Mode,
    TimingConfig,
    _end_tx,
    abort_tx,
    begin_tx,
    finalize,
    new_device,
    start_bo,
    step_slot,
)
from .trace_model import (
    DEFAULT_ED_THRESHOLD_DBM,
    OccupancyOverlay,
    RssiTrace,
    SynthParams,
    derive_occupancy,
    load_trace,
    synth_trace,
)

COLLISION_MODES = ("permissive", "abort")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceConfig:
    mode: Mode
    links: tuple[int, ...]
    timing: TimingConfig = field(default_factory=TimingConfig)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        object.__setattr__(self, "links", tuple(int(l) for l in self.links))
        if self.mode is Mode.SLO and len(self.links) != 1:
            raise ScenarioError(f"SLO device needs exactly one link, got {list(self.links)}")
        if not self.links or len(set(self.links)) != len(self.links):
            raise ScenarioError(f"links must be non-empty and distinct, got {list(self.links)}")


@dataclass(frozen=True)
class Scenario:
    trace: RssiTrace | SynthParams | str | Path
    devices: tuple[DeviceConfig, ...]
    ed_threshold_dbm: float = DEFAULT_ED_THRESHOLD_DBM
    duration_slots: int | None = None  # None: whole trace
    seed: int = 0
    regime_label: str | None = None
    collision_mode: str = "permissive"

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        if not self.devices:
            raise ScenarioError("scenario has no devices")
        if self.collision_mode not in COLLISION_MODES:
            raise ScenarioError(f"collision_mode must be one of {COLLISION_MODES}")

    def load(self) -> RssiTrace:
        if isinstance(self.trace, RssiTrace):
            return self.trace
        if isinstance(self.trace, SynthParams):
            return synth_trace(self.trace)
        return load_trace(self.trace)

    def horizon(self, trace: RssiTrace) -> int:
        T = trace.num_slots if self.duration_slots is None else self.duration_slots
        if not 0 < T <= trace.num_slots:
            raise ScenarioError(f"duration_slots={T} outside (0, {trace.num_slots}]")
        return T

    def validate(self, trace: RssiTrace) -> int:
        for i, dev in enumerate(self.devices):
            for l in dev.links:
                if not 0 <= l < trace.num_channels:
                    raise ScenarioError(
                        f"devices[{i}]: link index out of range ({l} for a {trace.num_channels}-channel trace)"
                    )
        return self.horizon(trace)

    def digest(self) -> str:
        if isinstance(self.trace, RssiTrace):
            src = {"rssi_sha256": hashlib.sha256(self.trace.samples.tobytes()).hexdigest(),
                   "shape": list(self.trace.samples.shape),
                   "slot_duration_us": self.trace.slot_duration_us}
        elif isinstance(self.trace, SynthParams):
            src = {"synth": asdict(self.trace)}
        else:
            src = {"path": str(self.trace)}
        doc = {
            "trace": src,
            "devices": [{"mode": d.mode.value, "links": list(d.links), "timing": asdict(d.timing)}
                        for d in self.devices],
            "ed_threshold_dbm": self.ed_threshold_dbm,
            "duration_slots": self.duration_slots,
            "seed": self.seed,
            "regime_label": self.regime_label,
            "collision_mode": self.collision_mode,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class TxEvent:
    device_id: int
    link: int
    start_slot: int
    duration_slots: int

    @property
    def end_slot(self) -> int:
        return self.start_slot + self.duration_slots

    def to_dict(self) -> dict:
        return {"device_id": self.device_id, "link": self.link, "start_slot": self.start_slot,
                "duration_slots": self.duration_slots, "end_slot": self.end_slot}


@dataclass
class RunLog:
    scenario_hash: str
    seed: int
    duration_slots: int
    events: list[list[TxEvent]]  # indexed by device id
    final_states: list[DeviceState]
    collisions: list[int]

    def device_events(self, device_id: int) -> list[TxEvent]:
        return self.events[device_id]

    def all_events(self) -> list[TxEvent]:
        return sorted((e for evs in self.events for e in evs),
                      key=lambda e: (e.start_slot, e.device_id))

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            for ev in self.all_events():
                fh.write(json.dumps(ev.to_dict(), sort_keys=True) + "\n")
        return path

    def summary(self) -> dict:
        return {
            "scenario_hash": self.scenario_hash,
            "seed": self.seed,
            "duration_slots": self.duration_slots,
            "collisions": self.collisions,
            "n_tx": [s.n_tx for s in self.final_states],
        }


def read_events_jsonl(path) -> list[TxEvent]:
    events = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                events.append(TxEvent(d["device_id"], d["link"], d["start_slot"], d["duration_slots"]))
    return events


def device_rng(seed: int, device_id: int) -> random.Random:
    # independent of the other devices so adding one does not perturb the rest
    digest = hashlib.sha256(f"conmlo:{seed}:{device_id}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))


def _prepare(scenario: Scenario, trace: RssiTrace | None):
    trace = scenario.load() if trace is None else trace
    T = scenario.validate(trace)
    base = derive_occupancy(trace.window(0, T), scenario.ed_threshold_dbm).base
    return T, base


def _events_from(open_events: list, T: int) -> list[list[TxEvent]]:
    out = []
    for dev_id, evs in enumerate(open_events):
        out.append([TxEvent(dev_id, link, start, min(end, T) - start) for link, start, end in evs])
    return out


# --------------------------------------------------------------------------
# reference engine
# --------------------------------------------------------------------------

def run_reference(scenario: Scenario, trace: RssiTrace | None = None) -> RunLog:
    T, base = _prepare(scenario, trace)
    overlay = OccupancyOverlay(base)
    rngs = [device_rng(scenario.seed, i) for i in range(len(scenario.devices))]
    devices = [new_device(d.mode, d.links, d.timing, rngs[i]) for i, d in enumerate(scenario.devices)]
    events: list[list] = [[] for _ in devices]  # [link, start, end]
    collisions = [0] * len(devices)

    for t in range(T):
        sensed = [{l: overlay.busy(l, t, exclude=i) for l in dev.links} for i, dev in enumerate(devices)]
        starts = []
        for i, dev in enumerate(devices):
            _, decision = step_slot(dev, sensed[i], t, rngs[i])
            if decision.truncated_tx is not None:
                link, _ = decision.truncated_tx
                events[i][-1][2] = t
                overlay.clear(link, t, owner=i)
            if decision.start_tx is not None:
                starts.append((i, decision.start_tx[0]))
        by_link: dict[int, list[int]] = {}
        for i, link in starts:
            by_link.setdefault(link, []).append(i)
        for link, owners in sorted(by_link.items()):
            # a deferred start does not re-sense and may hit a TXOP already on air
            on_air = [j for j, layer in sorted(overlay.layers.items())
                      if j not in owners and layer[link, t]]
            collided = len(owners) > 1 or bool(on_air)
            for j in on_air:
                collisions[j] += 1
            for i in owners:
                if collided:
                    collisions[i] += 1
                    if scenario.collision_mode == "abort":
                        abort_tx(devices[i], rngs[i])
                        continue
                txop = devices[i].timing.txop_slots
                events[i].append([link, t, t + txop])
                overlay.inject(link, t, txop, owner=i)

    for dev in devices:
        finalize(dev)
    return RunLog(scenario.digest(), scenario.seed, T, _events_from(events, T), devices, collisions)


# --------------------------------------------------------------------------
# event-skipping engine
# --------------------------------------------------------------------------

class _View:
    """Busy row of one channel as seen by one device, with lookup tables.

    ``last_busy[t]``: last busy index <= t (-1 if none); ``next_busy[t]``:
    first busy index >= t (T if none); ``elig_cum[t]``: number of slots in
    ``[0, t)`` that are idle and preceded by more than ``aifs`` idle slots
    since the last busy one.
    """

    __slots__ = ("busy", "aifs", "T", "last_busy", "next_busy", "elig_cum")

    def __init__(self, busy: np.ndarray, aifs: int):
        self.busy = busy
        self.aifs = aifs
        self.T = len(busy)
        self.rebuild()

    def rebuild(self):
        T = self.T
        idx = np.arange(T)
        self.last_busy = np.maximum.accumulate(np.where(self.busy, idx, -1))
        self.next_busy = np.minimum.accumulate(np.where(self.busy, idx, T)[::-1])[::-1]
        elig = ~self.busy & (idx - self.last_busy > self.aifs)
        self.elig_cum = np.zeros(T + 1, dtype=np.int64)
        np.cumsum(elig, out=self.elig_cum[1:])

    def update(self, lo: int, hi: int):
        """Refresh the tables after ``busy[lo:hi]`` changed."""
        T = self.T
        lo, hi = max(lo, 0), min(hi, T)
        if lo >= hi:
            return
        # busy outside [lo, hi) is unchanged, so last_busy / eligibility can only
        # move up to the next busy slot after hi, next_busy only below hi
        stop = int(self.next_busy[hi]) + 1 if hi < T else T
        stop = min(stop, T)
        prev = int(self.last_busy[lo - 1]) if lo > 0 else -1
        idx = np.arange(lo, stop)
        lb = np.maximum.accumulate(np.where(self.busy[lo:stop], idx, -1))
        np.maximum(lb, prev, out=lb)
        self.last_busy[lo:stop] = lb
        p = prev + 1
        tail = int(self.next_busy[hi]) if hi < T else T
        idx_p = np.arange(p, hi)
        self.next_busy[p:hi] = np.minimum(
            np.minimum.accumulate(np.where(self.busy[p:hi], idx_p, T)[::-1])[::-1], tail)
        elig = ~self.busy[lo:stop] & (idx - lb > self.aifs)
        old_end = int(self.elig_cum[stop])
        self.elig_cum[lo + 1:stop + 1] = self.elig_cum[lo] + np.cumsum(elig)
        shift = int(self.elig_cum[stop]) - old_end
        if shift and stop < T:
            self.elig_cum[stop + 1:] += shift

    def copy(self) -> "_View":
        return _View(self.busy.copy(), self.aifs)

    def _first_run(self, s: int, z: int):
        """End of the idle run holding ``s`` and its first eligible slot."""
        if self.busy[s]:
            return s, s
        return int(self.next_busy[s]), s + max(0, self.aifs - z)

    def expiry(self, s: int, z: int, b: int):
        """Slot at which a counter restarted at ``s`` (streak ``z``, backoff ``b``) wins."""
        if s >= self.T:
            return None
        need = max(b, 1)
        end, first = self._first_run(s, z)
        c1 = max(0, end - first)
        if c1 >= need:
            return first + need - 1
        target = int(self.elig_cum[end]) + need - c1
        i = int(np.searchsorted(self.elig_cum, target, side="left"))
        return i - 1 if i <= self.T else None

    def state_at(self, s: int, z: int, b: int, t: int):
        """(backoff, idle streak) after processing slots ``s..t``."""
        if t < s:
            return b, z
        end, first = self._first_run(s, z)
        count = max(0, min(end, t + 1) - first)
        if t + 1 > end:
            count += int(self.elig_cum[t + 1] - self.elig_cum[end])
        if end > t:
            streak = z + t - s + 1
        elif self.busy[t]:
            streak = 0
        else:
            streak = t - int(self.last_busy[t])
        return b - min(b, count), streak


class _Track:
    __slots__ = ("s", "z", "b", "win")

    def __init__(self, s, z, b, win):
        self.s, self.z, self.b, self.win = s, z, b, win


class _Runner:
    def __init__(self, dev_id: int, cfg: DeviceConfig, rng: random.Random, views: dict):
        self.id = dev_id
        self.rng = rng
        self.views = views  # channel -> _View, possibly shared with other devices
        self.private: set[int] = set()
        self.foreign: dict[int, list] = {}  # channel -> [[owner, a, b], ...] visible intervals
        self.tracks: dict[int, _Track] = {}
        self.state = new_device(cfg.mode, cfg.links, cfg.timing, rng)
        self._track(self.state.links, 0)

    def _track(self, links, s: int):
        for l in links:
            ls = self.state.per_link[l]
            view = self.views[l]
            self.tracks[l] = _Track(s, 0, ls.backoff, view.expiry(s, 0, ls.backoff))

    def _materialize(self, t: int):
        for l, tr in self.tracks.items():
            ls = self.state.per_link[l]
            ls.backoff, ls.idle_streak_slots = self.views[l].state_at(tr.s, tr.z, tr.b, t)
        self.tracks.clear()

    def _start_bo(self, links, s: int):
        start_bo(self.state, links, self.rng)
        self._track(links, s)

    def _begin(self, link: int, now: int, s: int):
        begin_tx(self.state, link, now, self.rng)
        restarted = [l for l in sorted(self.state.active_set)
                     if self.state.per_link[l].state is LinkStatus.SENSE]
        if restarted:
            self._track(restarted, s)

    def next_event(self):
        dev = self.state
        best = None
        tx = dev.transmitting
        if tx is not None:
            end = dev.per_link[tx].tx_started_at + dev.timing.txop_slots
            a = end - dev.delta
            best = a if a > dev.last_slot else end
        for tr in self.tracks.values():
            if tr.win is not None and (best is None or tr.win < best):
                best = tr.win
        return best

    def process(self, now: int):
        """Run slot ``now``; returns (start link or None, ended link or None, truncated link or None)."""
        dev = self.state
        dev.last_slot = now
        started = ended = truncated = None
        tx = dev.transmitting
        if tx is not None:
            end = dev.per_link[tx].tx_started_at + dev.timing.txop_slots
            if now == end - dev.delta:
                self._start_bo(dev.active_set, now)
            if now == end:
                _end_tx(dev, tx)
                ended = tx
                if dev.pending_tx is not None:
                    self._materialize(now)
                    self._begin(dev.pending_tx[0], now, now)
                    started = dev.transmitting
                else:
                    self._start_bo({tx}, now)

        winners = sorted(l for l, tr in self.tracks.items() if tr.win == now)
        if winners:
            l_w = winners[0] if len(winners) == 1 else self.rng.choice(winners)
            self._materialize(now)
            tx = dev.transmitting
            if tx is None:
                self._begin(l_w, now, now + 1)
                started = l_w
            elif dev.timing.defer_window_winner:
                dev.pending_tx = (l_w, dev.per_link[tx].tx_started_at + dev.timing.txop_slots)
                dev.active_set.discard(l_w)
                for l in dev.links:
                    if l != tx:
                        dev.per_link[l].state = LinkStatus.WAIT
            else:
                _end_tx(dev, tx)
                truncated = tx
                self._begin(l_w, now, now + 1)
                started = l_w
        return started, ended, truncated

    def abort(self, now: int):
        self._materialize(now)
        abort_tx(self.state, self.rng)
        self._track(self.state.links, now + 1)

    def finish(self, T: int):
        self._materialize(T - 1)
        self.state.last_slot = T - 1
        finalize(self.state)

    # -- write-back from other devices --------------------------------------

    def _own_view(self, channel: int) -> _View:
        if channel not in self.private:
            self.views[channel] = self.views[channel].copy()
            self.private.add(channel)
        return self.views[channel]

    def _reanchor(self, channel: int, now: int, lo: int, hi: int, change):
        tr = self.tracks.get(channel)
        if tr is not None:
            b, z = self.views[channel].state_at(tr.s, tr.z, tr.b, now)
        view = self._own_view(channel)
        change(view)
        view.update(lo, hi)
        if tr is not None:
            self.tracks[channel] = _Track(now + 1, z, b, view.expiry(now + 1, z, b))

    def foreign_start(self, owner: int, channel: int, now: int, end: int):
        a, b = now + 1, min(end, self.views[channel].T)
        self.foreign.setdefault(channel, []).append([owner, a, b])
        if a < b:
            self._reanchor(channel, now, a, b, lambda v: v.busy.__setitem__(slice(a, b), True))

    def foreign_truncate(self, owner: int, channel: int, now: int, base_row: np.ndarray):
        for iv in self.foreign.get(channel, ()):
            if iv[0] == owner and iv[1] <= now + 1 <= iv[2] and iv[2] > now + 1:
                old_end = iv[2]
                iv[2] = now + 1

                def change(v, lo=now + 1, hi=old_end):
                    v.busy[lo:hi] = base_row[lo:hi]
                    for _, a, b in self.foreign[channel]:
                        if a < hi and b > lo:
                            v.busy[max(a, lo):min(b, hi)] = True
                self._reanchor(channel, now, now + 1, old_end, change)
                return


def run(scenario: Scenario, trace: RssiTrace | None = None) -> RunLog:
    T, base = _prepare(scenario, trace)
    n_dev = len(scenario.devices)
    shared: dict[tuple[int, int], _View] = {}

    def view(channel: int, aifs: int) -> _View:
        key = (channel, aifs)
        if key not in shared:
            shared[key] = _View(base[channel], aifs)
        return shared[key]

    runners = []
    for i, cfg in enumerate(scenario.devices):
        views = {l: view(l, cfg.timing.aifs_slots) for l in cfg.links}
        runners.append(_Runner(i, cfg, device_rng(scenario.seed, i), views))
    on_channel: dict[int, list[_Runner]] = {}
    for r in runners:
        for l in r.state.links:
            on_channel.setdefault(l, []).append(r)

    events: list[list] = [[] for _ in runners]
    collisions = [0] * n_dev

    while True:
        pending = [(r.next_event(), r) for r in runners]
        times = [t for t, _ in pending if t is not None]
        if not times:
            break
        now = min(times)
        if now >= T:
            break
        starts = []
        truncations = []
        for t, r in pending:
            if t != now:
                continue
            started, _, truncated = r.process(now)
            if truncated is not None:
                events[r.id][-1][2] = now
                truncations.append((r.id, truncated))
            if started is not None:
                starts.append((r.id, started))

        for owner, link in truncations:
            for other in on_channel.get(link, ()):
                if other.id != owner:
                    other.foreign_truncate(owner, link, now, base[link])

        by_link: dict[int, list[int]] = {}
        for i, link in starts:
            by_link.setdefault(link, []).append(i)
        on_air_at = {}
        for j, evs in enumerate(events):
            if evs and evs[-1][1] < now < evs[-1][2]:
                on_air_at.setdefault(evs[-1][0], []).append(j)
        for link, owners in sorted(by_link.items()):
            on_air = [j for j in on_air_at.get(link, ()) if j not in owners]
            collided = len(owners) > 1 or bool(on_air)
            for j in on_air:
                collisions[j] += 1
            for i in owners:
                if collided:
                    collisions[i] += 1
                    if scenario.collision_mode == "abort":
                        runners[i].abort(now)
                        continue
                end = now + runners[i].state.timing.txop_slots
                events[i].append([link, now, end])
                for other in on_channel.get(link, ()):
                    if other.id != i:
                        other.foreign_start(i, link, now, end)

    for r in runners:
        r.finish(T)
    return RunLog(scenario.digest(), scenario.seed, T, _events_from(events, T),
                  [r.state for r in runners], collisions)
