import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikeforge import sweep as sw
from spikeforge.devmodel import PRESETS
from spikeforge.metrics import MetricsRecord, Pattern
from spikeforge.netlist import NeuronKind
from spikeforge.sweep import (CSV_COLUMNS, Extremes, Level, SchemaError, ScoreTable, ScoreVariant, SweepError,
                              SweepSpec, best_point, expand_grid, normalize, pareto_front, run_sweep, score,
                              voltage_average)


def rec(f, e, v=0.2, cm=1e-15, cr=1e-15, kind=NeuronKind.LIF, ok=True, p_static=None):
    return MetricsRecord(kind=kind, v_supp=v, c_mem=None if kind is NeuronKind.AH else cm, c_res=cr, i_syn=100e-9,
                         f_spike=f if ok else 0.0, e_spike=e if ok else None, p_static=p_static,
                         pattern=Pattern.PERIODIC if ok else Pattern.SILENT, converged=True, settled=ok)


# -- grids ------------------------------------------------------------------------------


def test_default_grid_cardinalities():
    assert len(sw.default_voltages()) == 17
    assert sw.default_voltages()[0] == 0.1 and sw.default_voltages()[-1] == 0.9
    assert len(sw.default_capacitances()) == 19
    assert SweepSpec(NeuronKind.LIF).size == 6137
    assert SweepSpec(NeuronKind.ML).size == 6137
    assert SweepSpec(NeuronKind.AH).size == 323
    assert len(expand_grid(SweepSpec(NeuronKind.AH))) == 323


def test_single_point_and_order():
    spec = SweepSpec(NeuronKind.LIF, v_supp_values=[0.2], c_mem_values=[1e-15], c_res_values=[1e-15])
    assert len(expand_grid(spec)) == 1
    spec = SweepSpec(NeuronKind.LIF, v_supp_values=[0.3, 0.2], c_mem_values=[2e-15, 1e-15],
                     c_res_values=[1e-15, 3e-15])
    keys = [(c.v_supp, c.c_mem, c.c_res) for c in expand_grid(spec)]
    assert keys[:3] == [(0.3, 2e-15, 1e-15), (0.3, 2e-15, 3e-15), (0.3, 1e-15, 1e-15)]
    assert len(keys) == 8


@pytest.mark.parametrize("kw", [dict(v_supp_values=[]), dict(c_res_values=[]), dict(c_mem_values=[]),
                                dict(c_res_values=[1e-12]), dict(v_supp_values=[1.5])])
def test_spec_invariants(kw):
    with pytest.raises(SweepError):
        SweepSpec(NeuronKind.ML, **kw)


def test_ah_ignores_membrane_axis():
    spec = SweepSpec(NeuronKind.AH, v_supp_values=[0.2], c_mem_values=[], c_res_values=[1e-15, 2e-15])
    assert [c.c_mem for c in expand_grid(spec)] == [None, None]


# -- algebra ------------------------------------------------------------------------------

EXT = Extremes(e_min=1.0, e_max=3.0, f_min=10.0, f_max=20.0)


def test_normalize_endpoints():
    assert normalize(1.0, 20.0, EXT) == (0.0, 1.0)
    assert normalize(3.0, 10.0, EXT) == (-1.0, 0.0)
    assert normalize(2.0, 15.0, EXT) == (-0.5, 0.5)
    assert normalize(5.0, 5.0, Extremes(5.0, 5.0, 5.0, 5.0)) == (0.0, 0.0)


def test_score_corners():
    assert score(0.0, 1.0, "literal") == 0.0 and score(0.0, 1.0, "corrected") == 1.0
    assert score(-1.0, 1.0, "literal") == -1.0 and score(-1.0, 1.0, "corrected") == 0.0
    assert score(-0.25, 0.8) == pytest.approx(0.6)


def test_best_point_single_and_ties():
    t = ScoreTable.from_records([rec(1e9, 1e-17)])
    assert best_point(t).record.f_spike == 1e9
    rows = [sw.ScoreRow(rec(1, 3)), sw.ScoreRow(rec(2, 5)), sw.ScoreRow(rec(3, 4))]
    for r, s in zip(rows, (0.2, 0.9, 0.9)):
        r.score_corrected = s
    assert best_point(ScoreTable(rows, None)).record.e_spike == 4
    # same score and energy: lower supply, then row order
    rows = [sw.ScoreRow(rec(1, 3, v=0.5)), sw.ScoreRow(rec(1, 3, v=0.3)), sw.ScoreRow(rec(1, 3, v=0.3))]
    for r in rows:
        r.score_corrected = 0.5
    assert best_point(ScoreTable(rows, None)) is rows[1]
    with pytest.raises(SweepError):
        best_point(ScoreTable.from_records([rec(1, 1, ok=False)]))


def test_pareto_examples():
    t = ScoreTable.from_records([rec(1e9, 1e-18), rec(2e9, 2e-18), rec(1.5e9, 3e-18)])
    front = pareto_front(t)
    assert [(r.record.f_spike, r.record.e_spike) for r in front] == [(1e9, 1e-18), (2e9, 2e-18)]
    one = ScoreTable.from_records([rec(1e9, 1e-18)])
    assert len(pareto_front(one)) == 1


def test_invalid_rows_are_excluded_from_extremes():
    t = ScoreTable.from_records([rec(1e9, 1e-18), rec(5e9, 9e-18, ok=False), rec(2e9, 2e-18)])
    assert t.extremes.f_max == 2e9 and t.extremes.e_max == 2e-18
    assert t.rows[1].score_corrected is None and len(t.valid_rows) == 2


pos = st.floats(1e-3, 1e3, allow_nan=False)
tables = st.lists(st.tuples(pos, pos), min_size=1, max_size=25)


@settings(max_examples=80)
@given(rows=tables, k=st.floats(1e-6, 1e6))
def test_scoring_properties(rows, k):
    t = ScoreTable.from_records([rec(f, e, v=0.1 + 0.01 * i) for i, (f, e) in enumerate(rows)])
    for r in t.rows:
        assert -1.0 <= r.e_norm <= 0.0 and 0.0 <= r.f_norm <= 1.0
        assert 0.0 <= r.score_corrected <= 1.0 and -1.0 <= r.score_literal <= 0.0
    front = pareto_front(t)
    assert best_point(t) in front
    fs = [r.record.f_spike for r in front]
    assert fs == sorted(fs)
    # rescaling every energy changes nothing about selection
    s = t.rescaled_energy(k)
    for a, b in zip(t.rows, s.rows):
        assert b.e_norm == pytest.approx(a.e_norm, abs=1e-9)
        assert b.score_corrected == pytest.approx(a.score_corrected, abs=1e-9)
    idx = {id(r): i for i, r in enumerate(t.rows)}
    sidx = {id(r): i for i, r in enumerate(s.rows)}
    assert [idx[id(r)] for r in front] == [sidx[id(r)] for r in pareto_front(s)]
    assert idx[id(best_point(t))] == sidx[id(best_point(s))]


# -- serialization -------------------------------------------------------------------------


def test_csv_schema_and_roundtrip(tmp_path):
    t = ScoreTable.from_records([rec(1e9, 1e-18, p_static=1e-9), rec(2e9, 2e-18), rec(0, 0, ok=False),
                                 rec(3e9, 5e-18, kind=NeuronKind.AH)])
    text = t.to_csv()
    lines = text.splitlines()
    assert tuple(lines[0].split(",")) == CSV_COLUMNS
    assert lines[3].split(",")[10] == ""  # missing e_spike emitted empty
    assert lines[4].split(",")[3] == ""  # AH has no c_mem
    back = ScoreTable.from_csv(text)
    assert back.to_csv() == text
    p = tmp_path / "t.csv"
    t.to_csv(p)
    assert p.read_text() == text


def test_csv_schema_mismatch_reports_diff():
    bad = "kind,level,v_supp_V\nLIF,circuit,0.2\n"
    with pytest.raises(SchemaError) as ei:
        ScoreTable.from_csv(bad)
    assert "c_res_fF" in ei.value.missing


def test_summary_has_both_variants():
    t = ScoreTable.from_records([rec(1e9, 1e-18), rec(2e9, 2e-18)])
    s = t.summary()
    assert set(s["best"]) == {"literal", "corrected"}
    assert s["default_score"] == "corrected"
    assert s["extremes"]["f_max_Hz"] == 2e9 and len(s["pareto_front"]) == 2


# -- voltage averaging --------------------------------------------------------------------


def test_single_voltage_average_is_identity():
    t = ScoreTable.from_records([rec(1e9, 1e-18, cr=1e-15), rec(2e9, 3e-18, cr=2e-15)])
    cells = voltage_average(t, (0.1, 0.9))
    assert [(c.f_spike, c.e_spike, c.n) for c in cells] == [(1e9, 1e-18, 1), (2e9, 3e-18, 1)]


def test_two_voltage_average_hand_computed():
    t = ScoreTable.from_records([
        rec(1e9, 1e-18, v=0.2, cr=1e-15), rec(3e9, 5e-18, v=0.2, cr=2e-15),
        rec(2e9, 3e-18, v=0.4, cr=1e-15), rec(4e9, 7e-18, v=0.4, cr=2e-15),
    ])
    a, b = voltage_average(t, (0.1, 0.7))
    assert (a.f_spike, a.e_spike) == pytest.approx((1.5e9, 2e-18))
    assert (b.f_spike, b.e_spike) == pytest.approx((3.5e9, 6e-18))
    # metrics mode then scores the averaged grid: (1 + e_norm) f_norm
    assert a.score_corrected == pytest.approx(0.0) and b.score_corrected == pytest.approx(0.0)
    s_a, s_b = voltage_average(t, (0.1, 0.7), mode="scores")
    assert s_a.score_corrected == pytest.approx(np.mean([t.rows[0].score_corrected, t.rows[2].score_corrected]))
    out = voltage_average(t, (0.3, 0.7))
    assert out[0].f_spike == 2e9 and out[0].n == 1


# -- execution ----------------------------------------------------------------------------


def toy_spec(**kw):
    base = dict(level=Level.BEHAVIORAL, v_supp_values=[0.2, 0.3], c_mem_values=[1e-15, 2e-15], c_res_values=[1e-15])
    base.update(kw)
    return SweepSpec(NeuronKind.LIF, **base)


def test_toy_sweep_rows_and_trend():
    t = run_sweep(toy_spec(), workers=1)
    assert len(t) == 4
    assert [(r.record.v_supp, r.record.c_mem) for r in t.rows] == [(0.2, 1e-15), (0.2, 2e-15), (0.3, 1e-15),
                                                                  (0.3, 2e-15)]
    assert t.rows[0].record.f_spike > t.rows[1].record.f_spike


def test_sweep_bytes_independent_of_workers():
    spec = toy_spec(c_mem_values=[0.5e-15, 1e-15, 2e-15])
    a = run_sweep(spec, workers=1)
    b = run_sweep(spec, workers=8)
    c = run_sweep(spec, workers=1)
    assert a.to_csv() == b.to_csv() == c.to_csv()
    assert a.summary_json() == b.summary_json()


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv(sw.ENV_THREADS, "3")
    assert sw.worker_count() == 3
    assert sw.worker_count(5) == 5
    monkeypatch.setenv(sw.ENV_THREADS, "x")
    with pytest.raises(SweepError):
        sw.worker_count()


def test_row_failures_are_captured(monkeypatch):
    real = sw.measure

    def flaky(cfg, opt=None, **kw):
        if cfg.c_mem == 2e-15:
            raise RuntimeError("synthetic failure")
        return real(cfg, opt, **kw)

    monkeypatch.setattr(sw, "measure", flaky)
    t = run_sweep(toy_spec(), workers=1)
    assert len(t) == 4
    bad = [r for r in t.rows if not r.record.converged]
    assert len(bad) == 2 and all("synthetic" in r.record.error for r in bad)


def test_all_failed_sweep_raises(monkeypatch):
    def dead(*a, **k):
        raise RuntimeError("nope")

    monkeypatch.setattr(sw, "measure", dead)
    with pytest.raises(SweepError, match="all 4"):
        run_sweep(toy_spec(), workers=1)


def test_ah_best_supply_is_not_deep_subthreshold():
    # smallest reset capacitance is the AH optimum (higher rate and lower energy)
    spec = SweepSpec(NeuronKind.AH, Level.CIRCUIT, c_res_values=(0.1e-15,), with_static=False)
    table = run_sweep(spec, workers=1)
    best = best_point(table)
    assert best.record.v_supp >= PRESETS["finfet7-like"].nmos.vt0
    assert best.record.v_supp > min(r.record.v_supp for r in table.valid_rows)
