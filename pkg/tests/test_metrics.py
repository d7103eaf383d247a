
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conmlo.channel_access import DeviceState, Mode, TimingConfig
from conmlo.engine import RunLog, TxEvent
from conmlo.metrics import (
    AggregateReport,
    IntegrityError,
    RunMetrics,
    aggregate,
    compute_metrics,
    continuity_runs,
    empirical_cdf,
)


def make_log(starts, txop=500, T=100_000, durations=None):
    durations = durations or [min(txop, T - s) for s in starts]
    events = [TxEvent(0, 0, s, d) for s, d in zip(starts, durations)]
    state = DeviceState(Mode.SLO, (0,), TimingConfig(txop_slots=txop))
    state.n_tx = len(events)
    return RunLog("x", 0, T, [events], [state], [0])


def test_hand_example():
    m = compute_metrics(make_log([0, 500, 1000, 1700, 2200]))
    assert m.continuity_runs == [3, 2]
    assert m.airtime == pytest.approx(2500 / 100_000)
    assert m.airtime == pytest.approx(0.025)
    assert m.hold_durations_ms == [15.0, 10.0]
    assert m.n_tx == 5


def test_full_continuity():
    m = compute_metrics(make_log([500 * k for k in range(200)]))
    assert m.continuity_runs == [200] and m.airtime == 1.0 and m.max_run == 200


def test_empty_log():
    m = compute_metrics(make_log([]))
    assert m.airtime == 0 and m.continuity_runs == [] and m.n_tx == 0 and m.max_run == 0


def test_clipped_final_txop():
    m = compute_metrics(make_log([99_800], T=100_000))
    assert m.airtime == pytest.approx(200 / 100_000)
    assert m.nominal_airtime == pytest.approx(500 / 100_000)
    assert m.hold_durations_ms == [2.0]


def test_overlap_is_integrity_error():
    with pytest.raises(IntegrityError):
        compute_metrics(make_log([0, 400]))


@st.composite
def schedules(draw):
    gaps = draw(st.lists(st.sampled_from([0, 0, 0, 1, 7, 300]), max_size=60))
    starts, t = [], draw(st.integers(0, 20))
    for g in gaps:
        starts.append(t)
        t += 500 + g
    return [s for s in starts if s < 100_000]


@given(schedules())
def test_run_invariants(starts):
    m = compute_metrics(make_log(starts))
    assert sum(m.continuity_runs) == m.n_tx == len(starts)
    assert 0 <= m.airtime <= 1
    assert m.max_run <= 100_000 // 500
    assert sum(m.hold_durations_ms) == pytest.approx(m.airtime * 100_000 * 10 / 1000)


@given(schedules(), schedules())
def test_concatenation_adds_runs(a, b):
    # shifting b past a with a gap keeps both run lists intact
    shift = (a[-1] + 500 + 1) if a else 0
    b = [s + shift for s in b]
    evs = lambda ss: [TxEvent(0, 0, s, 500) for s in ss]
    runs = lambda ss: [len(c) for c in continuity_runs(evs(ss))]
    assert runs(a + b) == runs(a) + runs(b)


def _m(runs):
    return RunMetrics(airtime=0.5, n_tx=sum(runs), continuity_runs=runs,
                      hold_durations_ms=[5.0 * r for r in runs])


def test_cdf_examples():
    rep = aggregate([(("low", 6, "conmlo"), _m([200]))])
    assert rep["low", 6, "conmlo"].nca_cdf == [(200, 1.0)]
    rep = aggregate([(("low", 6, "conmlo"), _m([1, 4])), (("low", 6, "conmlo"), _m([200]))])
    assert rep["low", 6, "conmlo"].nca_cdf == [(4, 0.5), (200, 1.0)]
    assert rep["low", 6, "conmlo"].cdf_at(199) == 0.5


def test_cdf_all_runs_pooled():
    rep = aggregate([(("low", 2, "mlo"), _m([1, 4])), (("low", 2, "mlo"), _m([4]))], run_statistic="all")
    assert rep["low", 2, "mlo"].nca_cdf == [(1, 1 / 3), (4, 1.0)]


def test_absent_group():
    rep = aggregate([(("low", 2, "mlo"), _m([1]))])
    assert rep.get(("high", 2, "mlo")) is None
    with pytest.raises(KeyError):
        rep["high", 2, "mlo"]


@given(st.lists(st.lists(st.integers(1, 200), min_size=1, max_size=5), min_size=1, max_size=20),
       st.randoms())
def test_aggregate_permutation_invariant(all_runs, rnd):
    items = [(("medium", 4, "conmlo"), _m(r)) for r in all_runs]
    shuffled = items[:]
    rnd.shuffle(shuffled)
    a, b = aggregate(items), aggregate(shuffled)
    assert a.cells == b.cells
    cdf = a["medium", 4, "conmlo"].nca_cdf
    probs = [p for _, p in cdf]
    assert probs == sorted(probs) and probs[-1] == 1.0


@given(st.lists(st.integers(0, 300), min_size=1))
def test_empirical_cdf(values):
    cdf = empirical_cdf(values)
    assert [v for v, _ in cdf] == sorted(set(values))
    assert cdf[-1][1] == 1.0


def test_write_csvs(tmp_path):
    rep = aggregate([(("low", 2, "conmlo", 11), _m([3, 2]))])
    paths = rep.write_csvs(tmp_path)
    assert [p.name for p in paths] == ["airtime.csv", "nca_cdf.csv", "holds.csv"]
    lines = (tmp_path / "airtime.csv").read_text().splitlines()
    assert lines == ["regime,L,mode,mean_airtime,n_traces,delta_slots", "low,2,conmlo,0.5,1,11"]
    assert (tmp_path / "nca_cdf.csv").read_text().splitlines()[1] == "low,2,conmlo,3,1.0,11"
    assert (tmp_path / "holds.csv").read_text().splitlines()[1:] == ["low,2,conmlo,10.0,1,11",
                                                                    "low,2,conmlo,15.0,1,11"]
