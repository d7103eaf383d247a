"""Per-slot listen-before-talk state machines for SLO, MLO (EMLSR) and ConMLO.

Every link runs its own DCF-style backoff counter.  A link in ``SENSE``
decrements its counter on idle slots once the channel has been idle for
longer than AIFS; the first link to reach zero wins and transmits for one
TXOP while the device's other links wait.  ConMLO restarts contention on the
non-transmitting links ``delta_slots`` before the ongoing TXOP ends so that
the next acquisition can follow it back-to-back.  MLO is the same machine
with ``delta_slots = 0`` and SLO is MLO on a single link.

Within one call of :func:`step_slot` the order is fixed:

1. TXOP bookkeeping of the transmitting link (anticipated restart at
   ``t0 + txop - delta``, completion at ``t0 + txop``, deferred start);
2. sensing on every ``SENSE`` link of the active set, in link order;
3. winner resolution.

Links restarted in phase 1 already sense in the same slot; links restarted
after phase 3 start sensing in the next one.
"""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field


class Mode(str, enum.Enum):
    SLO = "slo"
    MLO = "mlo"
    CONMLO = "conmlo"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown mode {value!r}; expected slo, mlo or conmlo") from None


class LinkStatus(str, enum.Enum):
    TRANSMIT = "TRANSMIT"
    SENSE = "SENSE"
    WAIT = "WAIT"


@dataclass(frozen=True)
class TimingConfig:
    slot_us: int = 10
    empty_slot_us: int = 10
    difs_us: int = 30
    sifs_us: int = 10
    aifs_slots: int = 3
    txop_slots: int = 500
    cw: int = 8
    delta_slots: int = 11
    bo_exclusive: bool = False  # draw from [0, cw - 1] instead of [0, cw]
    defer_window_winner: bool = True  # False: a winner inside the window preempts the ongoing TXOP

    def __post_init__(self):
        if self.slot_us <= 0:
            raise ValueError("slot_us must be positive")
        for name in ("empty_slot_us", "difs_us", "sifs_us"):
            value = getattr(self, name)
            if value < 0 or value % self.slot_us:
                raise ValueError(f"{name}={value} is not a non-negative multiple of slot_us={self.slot_us}")
        if self.aifs_slots < 1:
            raise ValueError("aifs_slots must be >= 1")
        if self.txop_slots < 1:
            raise ValueError("txop_slots must be >= 1")
        if self.cw < 0:
            raise ValueError("cw must be >= 0")
        if not 0 <= self.delta_slots <= self.txop_slots:
            raise ValueError(f"delta_slots={self.delta_slots} outside [0, txop_slots={self.txop_slots}]")


@dataclass
class LinkState:
    state: LinkStatus = LinkStatus.SENSE
    backoff: int = 0
    idle_streak_slots: int = 0
    tx_started_at: int | None = None


@dataclass
class DeviceState:
    mode: Mode
    links: tuple[int, ...]
    timing: TimingConfig = field(default_factory=TimingConfig)
    per_link: dict[int, LinkState] = field(default_factory=dict)
    active_set: set[int] = field(default_factory=set)
    pending_tx: tuple[int, int] | None = None
    n_tx: int = 0
    last_slot: int = -1

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        self.links = tuple(int(l) for l in self.links)
        if not self.links:
            raise ValueError("a device needs at least one link")
        if len(set(self.links)) != len(self.links):
            raise ValueError(f"duplicate link in {self.links}")
        if self.mode is Mode.SLO and len(self.links) != 1:
            raise ValueError(f"SLO device needs exactly one link, got {len(self.links)}")
        if not self.per_link:
            self.per_link = {l: LinkState() for l in self.links}
            self.active_set = set(self.links)

    @property
    def delta(self) -> int:
        """Anticipation shift actually applied; only ConMLO uses a non-zero one."""
        return self.timing.delta_slots if self.mode is Mode.CONMLO else 0

    @property
    def transmitting(self) -> int | None:
        for l in self.links:
            if self.per_link[l].state is LinkStatus.TRANSMIT:
                return l
        return None


@dataclass
class SlotDecision:
    start_tx: tuple[int, int] | None = None  # (link, slot)
    sensing_links: frozenset = frozenset()
    ended_tx: tuple[int, int] | None = None  # (link, slot) of a TXOP completed this slot
    truncated_tx: tuple[int, int] | None = None  # (link, slot) of a preempted TXOP


def draw_backoff(timing: TimingConfig, rng: random.Random) -> int:
    if timing.bo_exclusive:
        return rng.randrange(timing.cw) if timing.cw > 0 else 0
    return rng.randint(0, timing.cw)


def start_bo(device: DeviceState, links, rng: random.Random) -> DeviceState:
    """Redraw the backoff of ``links`` (in link order) and put them in SENSE."""
    for l in sorted(links):
        ls = device.per_link[l]
        ls.backoff = draw_backoff(device.timing, rng)
        ls.state = LinkStatus.SENSE
        ls.idle_streak_slots = 0
        ls.tx_started_at = None
    return device


def new_device(mode, links, timing: TimingConfig | None, rng: random.Random) -> DeviceState:
    """Device at slot 0 with a fresh backoff on every link."""
    device = DeviceState(Mode.parse(mode), tuple(links), timing or TimingConfig())
    return start_bo(device, device.links, rng)


def begin_tx(device: DeviceState, link: int, now: int, rng: random.Random) -> None:
    ls = device.per_link[link]
    ls.state = LinkStatus.TRANSMIT
    ls.tx_started_at = now
    device.active_set = set(device.links) - {link}
    for l in device.active_set:
        device.per_link[l].state = LinkStatus.WAIT
    device.pending_tx = None
    if device.delta == device.timing.txop_slots and device.delta > 0:
        # anticipation point coincides with the TXOP start
        start_bo(device, device.active_set, rng)


def _end_tx(device: DeviceState, link: int) -> None:
    ls = device.per_link[link]
    ls.state = LinkStatus.WAIT
    ls.tx_started_at = None
    device.n_tx += 1
    device.active_set.add(link)


def step_slot(device: DeviceState, sensed: dict, now: int, rng: random.Random):
    """Advance ``device`` by one slot given the busy/idle map ``sensed``.

    ``sensed[l]`` is truthy when link ``l`` is busy.  The device is updated in
    place and returned together with the :class:`SlotDecision`.
    """
    missing = [l for l in device.links if l not in sensed]
    if missing:
        raise KeyError(f"sensed map lacks links {missing}")
    if now <= device.last_slot:
        raise ValueError(f"slot {now} not after previous slot {device.last_slot}")
    device.last_slot = now
    timing = device.timing
    decision = SlotDecision()

    tx = device.transmitting
    if tx is not None:
        end = device.per_link[tx].tx_started_at + timing.txop_slots
        if now == end - device.delta:
            start_bo(device, device.active_set, rng)
        if now == end:
            _end_tx(device, tx)
            decision.ended_tx = (tx, now)
            if device.pending_tx is not None:
                begin_tx(device, device.pending_tx[0], now, rng)
                decision.start_tx = (device.transmitting, now)
            else:
                start_bo(device, {tx}, rng)

    winners = []
    sensing = []
    for l in sorted(device.active_set):
        ls = device.per_link[l]
        if ls.state is not LinkStatus.SENSE:
            continue
        sensing.append(l)
        if sensed[l]:
            ls.idle_streak_slots = 0  # frozen
            continue
        ls.idle_streak_slots += 1
        if ls.idle_streak_slots > timing.aifs_slots:
            if ls.backoff > 0:
                ls.backoff -= 1
            if ls.backoff == 0:
                winners.append(l)
    decision.sensing_links = frozenset(sensing)

    if winners:
        l_w = winners[0] if len(winners) == 1 else rng.choice(winners)
        tx = device.transmitting
        if tx is None:
            begin_tx(device, l_w, now, rng)
            decision.start_tx = (l_w, now)
        elif timing.defer_window_winner:
            end = device.per_link[tx].tx_started_at + timing.txop_slots
            device.pending_tx = (l_w, end)
            device.active_set.discard(l_w)
            for l in device.links:
                if l != tx:
                    device.per_link[l].state = LinkStatus.WAIT
        else:
            _end_tx(device, tx)
            decision.truncated_tx = (tx, now)
            begin_tx(device, l_w, now, rng)
            decision.start_tx = (l_w, now)
    return device, decision


def abort_tx(device: DeviceState, rng: random.Random) -> None:
    """Cancel a TXOP that just started (collision abort) and restart contention everywhere."""
    device.pending_tx = None
    device.active_set = set(device.links)
    start_bo(device, device.links, rng)


def finalize(device: DeviceState) -> None:
    """Close the run: a TXOP still on air at the horizon counts as completed."""
    if device.transmitting is not None:
        device.n_tx += 1
