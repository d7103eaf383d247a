"""Trace-driven simulator of SLO, Wi-Fi 7 MLO and continuous multi-link operation (ConMLO)."""
from .channel_access import DeviceState, LinkState, LinkStatus, Mode, SlotDecision, TimingConfig, start_bo, step_slot
from .engine import DeviceConfig, RunLog, Scenario, TxEvent, run, run_reference
from .metrics import AggregateReport, RunMetrics, aggregate, compute_metrics
from .trace_model import (
    OccupancyOverlay,
    RssiTrace,
    SynthParams,
    derive_occupancy,
    inject_transmission,
    load_trace,
    preset,
    save_trace,
    synth_trace,
)

__version__ = "0.1.0"
