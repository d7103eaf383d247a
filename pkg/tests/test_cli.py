import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from conmlo.cli import main
from conmlo.config import ConfigError, load_config, parse_config
from conmlo.experiments import sweep_cells
from conmlo.trace_model import derive_occupancy, load_trace


def write_cfg(tmp_path, doc, name="cfg.yaml"):
    doc.setdefault("out", str(tmp_path / "out"))
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def synth_doc(duty=0.4, slots=5000, channels=6, **kw):
    return {"trace": {"synth": {"duty_cycle": duty, "num_slots": slots, "num_channels": channels,
                                "mean_busy_burst_slots": 100}}, **kw}


def read_csv(p):
    with open(p) as fh:
        return list(csv.DictReader(fh))


def test_run_one_seed(tmp_path):
    p = write_cfg(tmp_path, synth_doc(devices=[{"mode": "conmlo", "links": [0, 1]}], seeds=[4]))
    assert main(["run", str(p)]) == 0
    out = tmp_path / "out"
    assert sorted(f.name for f in out.glob("*.csv")) == ["airtime.csv", "holds.csv", "nca_cdf.csv"]
    assert len(list(out.rglob("events.jsonl"))) == 1
    for line in (out / "seed4" / "events.jsonl").read_text().splitlines():
        assert set(json.loads(line)) == {"device_id", "link", "start_slot", "duration_slots", "end_slot"}
    doc = json.loads((out / "seed4" / "run.json").read_text())
    assert doc["seed"] == 4 and len(doc["metrics"]) == 1
    rows = read_csv(out / "airtime.csv")
    assert rows[0]["mode"] == "conmlo" and rows[0]["L"] == "2" and rows[0]["n_traces"] == "1"


def test_unknown_key_named(tmp_path, capsys):
    p = write_cfg(tmp_path, synth_doc(devices=[{"mode": "conmlo", "links": [0, 1]}],
                                      timing={"dleta_slots": 5}))
    assert main(["run", str(p)]) != 0
    assert "dleta_slots" in capsys.readouterr().err


def test_link_out_of_range(tmp_path, capsys):
    p = write_cfg(tmp_path, synth_doc(channels=4, devices=[{"mode": "conmlo", "links": list(range(6))}]))
    assert main(["run", str(p)]) != 0
    assert "link index out of range" in capsys.readouterr().err


def test_config_type_errors():
    with pytest.raises(ConfigError, match="timing.cw"):
        parse_config({"trace": {"synth": {}}, "timing": {"cw": "eight"}})
    with pytest.raises(ConfigError, match="devices\\[0\\].mode"):
        parse_config({"trace": {"synth": {}}, "devices": [{"mode": "emlsr", "links": [0]}]})
    with pytest.raises(ConfigError, match="trace"):
        parse_config({"trace": {"path": "a", "synth": {}}})


def test_device_timing_inherits_global():
    cfg = parse_config({"trace": {"synth": {}}, "timing": {"txop_slots": 100},
                        "devices": [{"mode": "conmlo", "links": [0, 1], "timing": {"delta_slots": 4}}]})
    assert cfg.devices[0].timing.txop_slots == 100 and cfg.devices[0].timing.delta_slots == 4


def test_shipped_configs_parse():
    from pathlib import Path
    for p in sorted(Path(__file__).parents[1].glob("configs/*.yaml")):
        load_config(p)


def test_sweep_cells_mode_constraint():
    cfg = parse_config({"trace": {"synth": {}}, "sweep": {"mode": ["slo", "mlo", "conmlo"], "L": [2, 6]}})
    warnings = []
    cells = sweep_cells(cfg, warnings.append)
    assert [(c.mode, c.L) for c in cells] == [("slo", 1), ("mlo", 2), ("mlo", 6), ("conmlo", 2), ("conmlo", 6)]
    assert warnings


def test_sweep_delta_axis_unification(tmp_path):
    doc = synth_doc(duty=0.0, slots=20_000, seeds=[0, 1, 2],
                    sweep={"mode": ["conmlo", "mlo"], "L": [4], "delta_slots": [0, 11]})
    p = write_cfg(tmp_path, doc)
    assert main(["sweep", str(p)]) == 0
    out = tmp_path / "out"
    for seed in range(3):
        con0 = (out / "conmlo_L4_D0_custom" / f"seed{seed}" / "events.jsonl").read_text()
        mlo = (out / "mlo_L4_D0_custom" / f"seed{seed}" / "events.jsonl").read_text()
        con11 = (out / "conmlo_L4_D11_custom" / f"seed{seed}" / "events.jsonl").read_text()
        assert con0 == mlo and con11 != mlo
    rows = read_csv(out / "airtime.csv")
    assert {(r["mode"], r["delta_slots"]) for r in rows} == {("conmlo", "0"), ("conmlo", "11"), ("mlo", "0")}


def test_sweep_axis_flag(tmp_path):
    p = write_cfg(tmp_path, synth_doc(slots=3000, seeds=[0], sweep={"mode": ["conmlo"], "L": [2]}))
    assert main(["sweep", str(p), "--axis", "L=1,3", "--axis", "regime=low,high"]) == 0
    rows = read_csv(tmp_path / "out" / "airtime.csv")
    assert {(r["regime"], r["L"]) for r in rows} == {("low", "1"), ("low", "3"), ("high", "1"), ("high", "3")}


def test_sweep_bad_axis(tmp_path):
    p = write_cfg(tmp_path, synth_doc(seeds=[0]))
    assert main(["sweep", str(p), "--axis", "colour=red"]) == 2


def test_synth_header(tmp_path):
    path = tmp_path / "low.otrc"
    assert main(["synth", "--preset", "low", "--channels", "8", "--slots", "100000", str(path)]) == 0
    raw = path.read_bytes()
    # magic, version, then channel and slot counts
    import struct
    magic, version, n_ch, n_slots, slot_us = struct.unpack_from("<4sHIQI", raw)
    assert (magic, n_ch, n_slots) == (b"OTRC", 8, 100_000)
    assert load_trace(path).samples.shape == (8, 100_000)


def test_synth_duty_zero_idle(tmp_path):
    path = tmp_path / "idle.csv"
    assert main(["synth", "--preset", "custom", "--duty", "0", "--channels", "2", "--slots", "50", str(path)]) == 0
    assert not derive_occupancy(load_trace(path)).base.any()


def test_synth_high_preset(tmp_path, capsys):
    path = tmp_path / "high.otrc"
    assert main(["synth", "--preset", "high", "--channels", "6", "--slots", "100000", "--seed", "3", str(path)]) == 0
    busy = derive_occupancy(load_trace(path)).base
    assert abs(busy.mean() - 0.70) <= 0.03


def _fairness_cfg(tmp_path, probe_mode, probe_links, duty=0.0, competitors=("none", "slo")):
    return write_cfg(tmp_path, synth_doc(duty=duty, slots=20_000, seeds=[0, 1],
                                         devices=[{"mode": probe_mode, "links": probe_links},
                                                  {"mode": "conmlo", "links": [0, 1, 2, 3, 4, 5]}],
                                         fairness={"competitors": list(competitors)}))


def test_fairness_idle(tmp_path):
    p = _fairness_cfg(tmp_path, "slo", [0])
    assert main(["fairness", str(p)]) == 0
    rows = read_csv(tmp_path / "out" / "fairness.csv")
    solo = {r["iteration"]: float(r["airtime"]) for r in rows if r["competitor"] == "none"}
    shared = {r["iteration"]: float(r["airtime"]) for r in rows if r["competitor"] == "slo"}
    for it in solo:
        assert shared[it] < solo[it]
    # the competitor's own airtime from the run record
    for seed in (0, 1):
        doc = json.loads((tmp_path / "out" / "vs_slo" / f"seed{seed}" / "run.json").read_text())
        a, b = (m["airtime"] for m in doc["metrics"])
        assert a < solo[str(seed)] and b < solo[str(seed)]
        assert a + b <= 1.0 + doc["collisions"][0] * 500 / 20_000


def test_fairness_needs_two_devices(tmp_path, capsys):
    p = write_cfg(tmp_path, synth_doc(devices=[{"mode": "slo", "links": [0]}] * 3))
    assert main(["fairness", str(p)]) == 2


def test_cli_entry_point(tmp_path):
    p = write_cfg(tmp_path, synth_doc(slots=2000, devices=[{"mode": "mlo", "links": [0, 1]}], seeds=[0]))
    proc = subprocess.run([sys.executable, "-m", "conmlo.cli", "run", str(p)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("seed=0 mlo n_tx=")


def test_recorded_trace_iterations(tmp_path):
    from conmlo.trace_model import SynthParams, save_trace, synth_trace
    save_trace(synth_trace(SynthParams(0.3, 50, 8, 6000, seed=2)), tmp_path / "rec.otrc")
    doc = {"trace": {"path": "rec.otrc", "iteration_slots": 2000, "iterations": [0, 3],
                     "channels": [0, 1, 2, 3, 4, 5]},
           "seeds": [0], "sweep": {"mode": ["conmlo"], "L": [6], "regime": ["low"]}}
    p = write_cfg(tmp_path, doc)
    assert main(["sweep", str(p)]) == 0
    cell = tmp_path / "out" / "conmlo_L6_D11_low"
    assert sorted(d.name for d in (cell / "seed0").iterdir()) == ["iter0000", "iter0001", "iter0002"]
    assert read_csv(cell / "airtime.csv")[0]["n_traces"] == "3"


def test_recorded_trace_too_short(tmp_path, capsys):
    from conmlo.trace_model import SynthParams, save_trace, synth_trace
    save_trace(synth_trace(SynthParams(0.3, 50, 8, 3000, seed=2)), tmp_path / "rec.otrc")
    doc = {"trace": {"path": "rec.otrc", "iteration_slots": 1000}, "regime": "medium",
           "devices": [{"mode": "slo", "links": [0]}]}
    assert main(["run", str(write_cfg(tmp_path, doc))]) == 2
    assert "beyond end of trace" in capsys.readouterr().err
