import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spikeforge import cli
from spikeforge.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main, parse_si
from spikeforge.sweep import CSV_COLUMNS


def test_si_parsing():
    assert parse_si("100n") == pytest.approx(100e-9)
    assert parse_si("1f") == pytest.approx(1e-15)
    assert parse_si("1fF") == pytest.approx(1e-15)
    assert parse_si("0.2") == 0.2
    assert parse_si("0.2V") == 0.2
    assert parse_si("2.5e-3") == 2.5e-3
    assert parse_si("3k") == 3e3
    assert parse_si(7) == 7.0
    for bad in ("abc", "1x", "", "1 f f"):
        with pytest.raises(ValueError):
            parse_si(bad)


@given(x=st.floats(1e-3, 1e3), p=st.sampled_from(sorted(cli._PREFIX)))
def test_si_prefix_property(x, p):
    assert parse_si(f"{x!r}{p}") == pytest.approx(x * cli._PREFIX[p], rel=1e-12)


def test_malformed_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["sim", "--vsupp", "zero"])
    assert ei.value.code == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_out_of_bounds_value_is_usage_error(tmp_path, capsys):
    assert main(["sim", "--vsupp", "3", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "v_supp" in capsys.readouterr().err


def test_sim_ah_circuit_ramp_and_snap(tmp_path):
    assert main(["sim", "--kind", "ah", "--level", "circuit", "--vsupp", "0.2", "--cres", "1f",
                 "--out", str(tmp_path)]) == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "ah_circuit_waveform.csv")))
    head = rows[0]
    assert head[0] == "time_s" and head[-2:] == ["p_total_w", "p_supply_w"]
    data = np.array(rows[1:], dtype=float)
    t, vm = data[:, 0], data[:, head.index("v_n_mem")]
    # snaps: fast drops of at least 0.3 V_supp
    dv = np.diff(vm)
    assert np.sum(dv < 0) > 0
    m = json.load(open(tmp_path / "ah_circuit_metrics.json"))
    assert m["f_spike"] > 0 and m["pattern"] == "periodic" and m["c_mem"] is None


def test_sim_zero_input_is_silent(tmp_path):
    assert main(["sim", "--kind", "lif", "--isyn", "0", "--out", str(tmp_path)]) == EXIT_OK
    m = json.load(open(tmp_path / "lif_circuit_metrics.json"))
    assert m["f_spike"] == 0.0 and m["pattern"] == "silent"


def test_sim_behavioral_from_config_file(tmp_path):
    conf = tmp_path / "run.json"
    conf.write_text(json.dumps({"kind": "ML", "level": "behavioral", "v_supp": "0.2", "c_mem": "2f",
                                "out": str(tmp_path / "o")}))
    # the flag overrides the file's capacitance
    assert main(["sim", "--config", str(conf), "--cmem", "1f"]) == EXIT_OK
    m = json.load(open(tmp_path / "o" / "ml_behavioral_metrics.json"))
    assert m["c_mem"] == pytest.approx(1e-15) and m["level"] == "behavioral"
    assert (tmp_path / "o" / "ml_behavioral_waveform.csv").read_text().startswith("time_s,v_m,w")


def test_bad_config_file(tmp_path):
    conf = tmp_path / "run.json"
    conf.write_text('{"kind": "LIF", "bogus": 1}')
    assert main(["sim", "--config", str(conf)]) == EXIT_USAGE
    conf.write_text("{not json")
    assert main(["sim", "--config", str(conf)]) == EXIT_USAGE
    assert main(["sim", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE


def toy_sweep(out):
    return main(["sweep", "--kind", "lif", "--level", "behavioral", "--vsupp-values", "0.2,0.3",
                 "--cmem-values", "1f,2f", "--cres-values", "1f,2f", "--out", str(out), "--workers", "1"])


def test_sweep_and_report_roundtrip(tmp_path):
    assert toy_sweep(tmp_path / "a") == EXIT_OK
    assert toy_sweep(tmp_path / "b") == EXIT_OK
    a = (tmp_path / "a" / "lif_behavioral_sweep.csv").read_bytes()
    assert a == (tmp_path / "b" / "lif_behavioral_sweep.csv").read_bytes()
    lines = a.decode().splitlines()
    assert tuple(lines[0].split(",")) == CSV_COLUMNS and len(lines) == 9
    summary = json.loads((tmp_path / "a" / "lif_behavioral_sweep_summary.json").read_text())
    assert summary["n_rows"] == 8

    out = tmp_path / "rep"
    assert main(["report", str(tmp_path / "a" / "lif_behavioral_sweep.csv"), "--out", str(out)]) == EXIT_OK
    for name in ("avg_f_spike_Hz", "avg_e_spike_J", "avg_score_corrected", "voltage_line", "static_power",
                 "summary"):
        assert (out / f"{name}.csv").exists()
    grid = list(csv.reader(open(out / "avg_f_spike_Hz.csv")))
    assert grid[0][1:] == ["1.0", "2.0"] and [r[0] for r in grid[1:]] == ["1.0", "2.0"]
    summ = list(csv.DictReader(open(out / "summary.csv")))[0]
    best = summary["best"]["corrected"]
    assert float(summ["best_v_supp_V"]) == best["v_supp_V"]
    assert float(summ["best_f_spike_Hz"]) == best["f_spike_Hz"]


def test_report_schema_mismatch(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("kind,level\nLIF,circuit\n")
    assert main(["report", str(p)]) == EXIT_USAGE
    assert "missing" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "none.csv")]) == EXIT_USAGE


def test_report_tables_hand_means():
    from spikeforge.metrics import MetricsRecord, Pattern
    from spikeforge.netlist import NeuronKind
    from spikeforge.sweep import ScoreTable

    def r(v, cr, f, e):
        return MetricsRecord(NeuronKind.AH, v, None, cr, 100e-9, f, e, 1e-9 * v, Pattern.PERIODIC, True, True)

    t = ScoreTable.from_records([r(0.1, 1e-15, 1.0, 2.0), r(0.1, 2e-15, 3.0, 4.0), r(0.9, 1e-15, 5.0, 6.0),
                                 r(0.9, 2e-15, 7.0, 8.0)])
    tabs = cli.report_tables(t)
    head, rows = tabs["avg_f_spike_Hz"]
    assert rows == [["", 3.0, 5.0]]
    _, stat = tabs["static_power"]
    assert stat == [[0.1, pytest.approx(1e-10)], [0.9, pytest.approx(9e-10)]]
    _, summ = tabs["summary"]
    assert summ[0][9:] == [pytest.approx(1e-10), pytest.approx(9e-10)]


def test_validate_quick_passes(capsys):
    assert main(["validate", "--quick"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and "oracles passed" in out


def test_validate_fault_injection_is_caught(capsys):
    assert main(["validate", "--quick", "--inject-current-scale", "1.1"]) == EXIT_RUNTIME
    out = capsys.readouterr().out.splitlines()
    assert all(line.startswith("[PASS]") for line in out if "jacobian" in line)
    assert all(line.startswith("[FAIL]") for line in out if "lif rate" in line)


def test_validate_missing_preset_file(tmp_path):
    assert main(["validate", "--quick", "--preset-file", str(tmp_path / "nope.json")]) == EXIT_USAGE


def test_preset_file_roundtrip(tmp_path):
    from spikeforge.devmodel import PRESETS

    p = tmp_path / "preset.json"
    p.write_text(json.dumps(PRESETS["finfet7-like"].to_dict()))
    assert main(["validate", "--quick", "--preset-file", str(p)]) == EXIT_OK
