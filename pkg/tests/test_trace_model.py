import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conmlo.trace_model import (
    OccupancyOverlay,
    RssiTrace,
    SynthParams,
    TraceFormatError,
    derive_occupancy,
    inject_transmission,
    load_trace,
    preset,
    save_trace,
    synth_trace,
)


def test_csv_echo(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("channel,slot,rssi_dbm\n" + "".join(
        f"{c},{s},-100\n" for c in range(2) for s in range(4)))
    tr = load_trace(p)
    assert (tr.num_channels, tr.num_slots) == (2, 4)
    assert np.all(tr.samples == -100.0)


@pytest.mark.parametrize("fmt", ["binary", "csv"])
def test_roundtrip(tmp_path, fmt):
    tr = synth_trace(SynthParams(0.3, 20, 3, 500, seed=4))
    p = save_trace(tr, tmp_path / f"t.{'otrc' if fmt == 'binary' else 'csv'}", fmt)
    back = load_trace(p)
    np.testing.assert_array_equal(back.samples, tr.samples)


def test_binary_truncated_payload(tmp_path):
    tr = RssiTrace(np.full((6, 100_000), -100.0))
    p = save_trace(tr, tmp_path / "t.otrc", "binary")
    data = p.read_bytes()
    p.write_bytes(data[:-4])
    with pytest.raises(TraceFormatError, match="truncated payload"):
        load_trace(p)


def test_binary_bad_magic_names_offset(tmp_path):
    p = tmp_path / "t.otrc"
    p.write_bytes(b"NOPE" + bytes(30))
    with pytest.raises(TraceFormatError, match="byte 0"):
        load_trace(p)


def test_binary_non_finite(tmp_path):
    tr = RssiTrace(np.full((2, 5), -100.0))
    p = save_trace(tr, tmp_path / "t.otrc", "binary")
    raw = bytearray(p.read_bytes())
    header = len(raw) - 2 * 5 * 4
    raw[header + 4 * 7:header + 4 * 8] = struct.pack("<f", float("nan"))
    p.write_bytes(bytes(raw))
    with pytest.raises(TraceFormatError, match="non-finite"):
        load_trace(p)


def test_csv_dimension_mismatch_names_row(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("channel,slot,rssi_dbm\n0,0,-100\n0,1,-100\n1,0,-100\n")
    with pytest.raises(TraceFormatError, match="no row for channel 1, slot 1"):
        load_trace(p)


def test_select_six_of_eight():
    tr = synth_trace(SynthParams(0.4, 100, 8, 100_000, seed=1))
    assert (tr.num_channels, tr.num_slots) == (8, 100_000)
    six = tr.select_channels(range(6))
    np.testing.assert_array_equal(six.samples, tr.samples[:6])


@pytest.mark.parametrize("rssi,busy", [(-90.0, False), (-82.0, True), (-60.0, True), (-82.0001, False)])
def test_ed_threshold_boundary(rssi, busy):
    occ = derive_occupancy(RssiTrace(np.array([[rssi]])), -82.0)
    assert bool(occ.base[0, 0]) is busy


@given(st.lists(st.floats(-120, -20, width=32), min_size=1, max_size=40),
       st.floats(-110, -30), st.floats(-110, -30))
def test_occupancy_monotone_in_threshold(samples, a, b):
    tr = RssiTrace(np.array([samples]))
    lo, hi = min(a, b), max(a, b)
    # raising the threshold can only clear busy cells
    assert np.all(derive_occupancy(tr, hi).base <= derive_occupancy(tr, lo).base)
    assert derive_occupancy(tr, float("-inf")).base.all()
    assert not derive_occupancy(tr, float("inf")).base.any()


def test_inject_half_open_idempotent_and_clipped():
    occ = OccupancyOverlay(np.zeros((2, 100_000), dtype=bool))
    inject_transmission(occ, 1, 100, 500)
    eff = occ.effective
    assert eff[1, 100:600].all() and not eff[1, 600] and not eff[1, 99] and not eff[0].any()
    once = occ.effective.copy()
    inject_transmission(occ, 1, 100, 500)
    np.testing.assert_array_equal(occ.effective, once)

    inject_transmission(occ, 0, 99_900, 500)
    assert occ.effective[0, 99_900:].all() and occ.effective[0].sum() == 100


def test_inject_link_out_of_range():
    occ = OccupancyOverlay(np.zeros((2, 10), dtype=bool))
    with pytest.raises(IndexError):
        inject_transmission(occ, 2, 0, 5)


def test_overlay_excludes_owner():
    occ = OccupancyOverlay(np.zeros((1, 10), dtype=bool))
    occ.inject(0, 2, 3, owner=7)
    assert occ.busy(0, 3) and not occ.busy(0, 3, exclude=7)
    occ.clear(0, 3, owner=7)
    assert occ.busy(0, 2) and not occ.busy(0, 3)


@pytest.mark.parametrize("duty,value", [(0.0, -100.0), (1.0, -60.0)])
def test_synth_degenerate_duty(duty, value):
    tr = synth_trace(SynthParams(duty, 300, 3, 10_000, seed=2))
    assert np.all(tr.samples == value)


def test_synth_stationary_duty():
    # two-state chain with p(b->i)=1/300 and p(i->b)=0.4/(0.6*300) has busy fraction 0.4
    tr = synth_trace(SynthParams(0.4, 300, 4, 1_000_000, seed=11))
    busy = derive_occupancy(tr).base
    assert abs(busy.mean() - 0.4) <= 0.02
    for row in busy:
        assert abs(row.mean() - 0.4) <= 0.02


def test_synth_mean_burst_length():
    tr = synth_trace(SynthParams(0.4, 300, 1, 1_000_000, seed=3))
    busy = derive_occupancy(tr).base[0].astype(np.int8)
    edges = np.diff(np.concatenate([[0], busy, [0]]))
    lengths = np.flatnonzero(edges == -1) - np.flatnonzero(edges == 1)
    assert abs(lengths.mean() - 300) / 300 < 0.1


def test_preset_high_duty():
    busy = derive_occupancy(synth_trace(preset("high", 6, 100_000, seed=0))).base
    assert abs(busy.mean() - 0.70) <= 0.03


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_synth_reproducible(seed):
    p = SynthParams(0.5, 50, 2, 2000, seed=seed)
    np.testing.assert_array_equal(synth_trace(p).samples, synth_trace(p).samples)


def test_synth_channels_independent_of_count():
    a = synth_trace(SynthParams(0.4, 50, 2, 5000, seed=9))
    b = synth_trace(SynthParams(0.4, 50, 4, 5000, seed=9))
    np.testing.assert_array_equal(a.samples, b.samples[:2])


def test_rssi_trace_rejects_nan():
    with pytest.raises(ValueError, match="channel 1, slot 2"):
        RssiTrace(np.array([[0.0, 0, 0], [0, 0, np.nan]]))


def test_split_drops_tail():
    tr = RssiTrace(np.zeros((1, 25)))
    parts = tr.split(10)
    assert [p.num_slots for p in parts] == [10, 10]
