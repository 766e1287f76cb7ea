"""Design-space sweeps, normalization and the speed/efficiency score.

Per sweep, energies and frequencies of the valid rows are normalized to
their own extremes::

    e_norm = -(E - E_min) / (E_max - E_min)      in [-1, 0]
    f_norm =  (f - f_min) / (f_max - f_min)      in [0, 1]

Two scores are emitted for every valid row: the literal product
``e_norm * f_norm`` (range [-1, 0], maximized at minimum energy regardless of
speed) and the corrected ``(1 + e_norm) * f_norm`` (range [0, 1], equal to 1
only at simultaneously minimal energy and maximal frequency).  The corrected
score is the default for optimum selection.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import product
from typing import Callable, Iterable, Sequence

import numpy as np

from .devmodel import PRESETS, DevicePreset
from .metrics import MetricsRecord, Pattern, measure, static_power
from .netlist import C_MAX, C_MIN, NeuronConfig, NeuronKind
from .solver import SolverError, SolverOptions

ENV_THREADS = "SPIKEFORGE_THREADS"

CSV_COLUMNS = (
    "kind", "level", "v_supp_V", "c_mem_fF", "c_res_fF", "i_syn_nA", "converged", "settled",
    "pattern", "f_spike_Hz", "e_spike_J", "p_static_W", "e_norm", "f_norm", "score_literal",
    "score_corrected",
)

#: supply range averaged over for capacitance maps, per architecture
VOLTAGE_AVERAGE_RANGE = {
    NeuronKind.LIF: (0.1, 0.7),
    NeuronKind.ML: (0.1, 0.6),
    NeuronKind.AH: (0.1, 0.9),
}


class SweepError(RuntimeError):
    pass


class Level(str, Enum):
    CIRCUIT = "circuit"
    BEHAVIORAL = "behavioral"


class ScoreVariant(str, Enum):
    LITERAL = "literal"
    CORRECTED = "corrected"


def default_voltages() -> tuple[float, ...]:
    return tuple(round(0.10 + 0.05 * k, 10) for k in range(17))


def default_capacitances() -> tuple[float, ...]:
    fine = [round(0.1 * k, 10) for k in range(1, 10)]
    coarse = [float(k) for k in range(1, 11)]
    return tuple(round(c * 1e-15, 25) for c in fine + coarse)


@dataclass(frozen=True)
class SweepSpec:
    """One sweep: a kind, an evaluation level and the three grid axes.

    For AH the ``c_mem`` axis is ignored (single capacitor).
    """

    kind: NeuronKind
    level: Level = Level.CIRCUIT
    v_supp_values: tuple[float, ...] = field(default_factory=default_voltages)
    c_mem_values: tuple[float, ...] = field(default_factory=default_capacitances)
    c_res_values: tuple[float, ...] = field(default_factory=default_capacitances)
    i_syn: float = 100e-9
    solver: SolverOptions = field(default_factory=SolverOptions)
    preset: DevicePreset = PRESETS["finfet7-like"]
    bias: dict = field(default_factory=dict)
    with_static: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", NeuronKind.parse(self.kind))
        object.__setattr__(self, "level", Level(self.level))
        for name in ("v_supp_values", "c_mem_values", "c_res_values"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        if not self.v_supp_values or not self.c_res_values:
            raise SweepError("sweep axes must be nonempty")
        if self.kind is not NeuronKind.AH and not self.c_mem_values:
            raise SweepError("sweep axes must be nonempty")
        for c in self.c_res_values + (self.c_mem_values if self.kind is not NeuronKind.AH else ()):
            if not C_MIN * (1 - 1e-9) <= c <= C_MAX * (1 + 1e-9):
                raise SweepError(f"capacitance {c!r} outside [{C_MIN}, {C_MAX}] F")
        for v in self.v_supp_values:
            if not (v == 0 or 0.05 <= v <= 1.0):
                raise SweepError(f"v_supp {v!r} outside [0.05, 1.0] V")
        if self.i_syn < 0:
            raise SweepError("i_syn must be >= 0")

    @property
    def mem_axis(self) -> tuple:
        return (None,) if self.kind is NeuronKind.AH else self.c_mem_values

    @property
    def size(self) -> int:
        return len(self.v_supp_values) * len(self.mem_axis) * len(self.c_res_values)


def expand_grid(spec: SweepSpec) -> list[NeuronConfig]:
    """Cartesian product in lexicographic (v_supp, c_mem, c_res) order."""
    out = []
    for v, cm, cr in product(spec.v_supp_values, spec.mem_axis, spec.c_res_values):
        out.append(NeuronConfig(spec.kind, v, cm, cr, i_syn=spec.i_syn, bias=dict(spec.bias),
                                preset=spec.preset))
    return out


# -- execution ---------------------------------------------------------------------


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise SweepError(f"{ENV_THREADS} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _run_one(args) -> MetricsRecord:
    cfg, level, opt = args
    try:
        return measure(cfg, opt, level=level.value)
    except Exception as exc:  # captured per row; a sweep never aborts on one config
        return MetricsRecord.for_config(cfg, level=level.value, converged=False,
                                        error=f"{type(exc).__name__}: {exc}")


def _static_one(args) -> tuple[float | None, str]:
    cfg, opt = args
    try:
        return static_power(cfg, opt), ""
    except Exception as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _pmap(fn, items, workers: int, progress=None):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        out = []
        for k, it in enumerate(items):
            out.append(fn(it))
            if progress:
                progress(k + 1, len(items))
        return out
    out = []
    with ProcessPoolExecutor(max_workers=workers) as ex:
        # map() yields in submission order, which fixes the output order
        for k, res in enumerate(ex.map(fn, items, chunksize=1)):
            out.append(res)
            if progress:
                progress(k + 1, len(items))
    return out


def run_sweep(spec: SweepSpec, workers: int | None = None,
              progress: Callable[[int, int], None] | None = None) -> "ScoreTable":
    """Simulate every grid point and score the result.

    Row order equals :func:`expand_grid` order for any worker count.
    """
    configs = expand_grid(spec)
    n = worker_count(workers)
    records = _pmap(_run_one, [(c, spec.level, spec.solver) for c in configs], n, progress)
    if spec.with_static and spec.level is Level.CIRCUIT:
        volts = sorted(set(spec.v_supp_values))
        probe = {v: next(c for c in configs if c.v_supp == v) for v in volts}
        statics = _pmap(_static_one, [(probe[v], spec.solver) for v in volts], n)
        by_v = dict(zip(volts, statics))
        for r in records:
            p, err = by_v[r.v_supp]
            r.p_static = p
            if err and not r.error:
                r.error = f"static: {err}"
    if all(not r.converged for r in records):
        raise SweepError(f"all {len(records)} configurations failed")
    return ScoreTable.from_records(records)


# -- scoring -----------------------------------------------------------------------


@dataclass(frozen=True)
class Extremes:
    e_min: float
    e_max: float
    f_min: float
    f_max: float

    def to_dict(self) -> dict:
        return {"e_min_J": self.e_min, "e_max_J": self.e_max, "f_min_Hz": self.f_min,
                "f_max_Hz": self.f_max}


def extremes_of(records: Iterable[MetricsRecord]) -> Extremes | None:
    es = [r.e_spike for r in records if r.valid]
    fs = [r.f_spike for r in records if r.valid]
    if not es:
        return None
    return Extremes(min(es), max(es), min(fs), max(fs))


def normalize(e_spike: float, f_spike: float, ext: Extremes) -> tuple[float, float]:
    """Energy and frequency normalized to the sweep extremes.

    A degenerate axis (max == min) normalizes to 0.
    """
    de = ext.e_max - ext.e_min
    df = ext.f_max - ext.f_min
    e_norm = -(e_spike - ext.e_min) / de if de > 0 else 0.0
    f_norm = (f_spike - ext.f_min) / df if df > 0 else 0.0
    # 0.0 rather than -0.0 keeps the CSV tidy
    return (e_norm + 0.0, f_norm + 0.0)


def score(e_norm: float, f_norm: float, variant: ScoreVariant | str = ScoreVariant.CORRECTED) -> float:
    variant = ScoreVariant(variant)
    if variant is ScoreVariant.LITERAL:
        return e_norm * f_norm + 0.0
    return (1.0 + e_norm) * f_norm


@dataclass
class ScoreRow:
    record: MetricsRecord
    e_norm: float | None = None
    f_norm: float | None = None
    score_literal: float | None = None
    score_corrected: float | None = None

    @property
    def valid(self) -> bool:
        return self.record.valid

    def score(self, variant: ScoreVariant | str) -> float | None:
        return self.score_corrected if ScoreVariant(variant) is ScoreVariant.CORRECTED else self.score_literal

    def to_dict(self) -> dict:
        r = self.record
        return {
            "kind": r.kind.value, "level": r.level, "v_supp_V": r.v_supp,
            "c_mem_fF": None if r.c_mem is None else _ff(r.c_mem), "c_res_fF": _ff(r.c_res),
            "i_syn_nA": _na(r.i_syn), "converged": r.converged, "settled": r.settled,
            "pattern": r.pattern.value, "f_spike_Hz": r.f_spike, "e_spike_J": r.e_spike,
            "p_static_W": r.p_static, "e_norm": self.e_norm, "f_norm": self.f_norm,
            "score_literal": self.score_literal, "score_corrected": self.score_corrected,
        }


def _ff(c: float) -> float:
    return round(c * 1e15, 12)


def _na(i: float) -> float:
    return round(i * 1e9, 12)


@dataclass
class ScoreTable:
    rows: list[ScoreRow]
    extremes: Extremes | None

    @classmethod
    def from_records(cls, records: Sequence[MetricsRecord]) -> "ScoreTable":
        ext = extremes_of(records)
        rows = []
        for r in records:
            row = ScoreRow(r)
            if r.valid and ext is not None:
                row.e_norm, row.f_norm = normalize(r.e_spike, r.f_spike, ext)
                row.score_literal = score(row.e_norm, row.f_norm, ScoreVariant.LITERAL)
                row.score_corrected = score(row.e_norm, row.f_norm, ScoreVariant.CORRECTED)
            rows.append(row)
        return cls(rows, ext)

    @property
    def valid_rows(self) -> list[ScoreRow]:
        return [r for r in self.rows if r.valid]

    def __len__(self):
        return len(self.rows)

    def rescaled_energy(self, factor: float) -> "ScoreTable":
        recs = [replace(r.record, e_spike=None if r.record.e_spike is None else r.record.e_spike * factor)
                for r in self.rows]
        return ScoreTable.from_records(recs)

    # -- serialization

    def to_csv(self, path_or_buf=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            d = row.to_dict()
            w.writerow([_fmt(d[c]) for c in CSV_COLUMNS])
        text = buf.getvalue()
        if path_or_buf is not None:
            if hasattr(path_or_buf, "write"):
                path_or_buf.write(text)
            else:
                with open(path_or_buf, "w", newline="") as fh:
                    fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "ScoreTable":
        """Parse a sweep CSV; raises :class:`SchemaError` on a header mismatch."""
        if isinstance(path_or_text, str) and "\n" in path_or_text:
            text = path_or_text
        else:
            with open(path_or_text, newline="") as fh:
                text = fh.read()
        rd = csv.reader(io.StringIO(text))
        header = tuple(next(rd, ()))
        if header != CSV_COLUMNS:
            raise SchemaError(header)
        rows = []
        for line in rd:
            if not line:
                continue
            d = dict(zip(CSV_COLUMNS, line))
            rec = MetricsRecord(
                kind=NeuronKind.parse(d["kind"]),
                v_supp=float(d["v_supp_V"]),
                c_mem=None if d["c_mem_fF"] == "" else float(d["c_mem_fF"]) * 1e-15,
                c_res=float(d["c_res_fF"]) * 1e-15,
                i_syn=float(d["i_syn_nA"]) * 1e-9,
                f_spike=float(d["f_spike_Hz"]) if d["f_spike_Hz"] else 0.0,
                e_spike=_opt(d["e_spike_J"]),
                p_static=_opt(d["p_static_W"]),
                pattern=Pattern(d["pattern"]),
                converged=d["converged"] == "true",
                settled=d["settled"] == "true",
                level=d["level"],
            )
            rows.append(ScoreRow(rec, _opt(d["e_norm"]), _opt(d["f_norm"]),
                                 _opt(d["score_literal"]), _opt(d["score_corrected"])))
        return cls(rows, extremes_of([r.record for r in rows]))

    def summary(self) -> dict:
        out = {
            "n_rows": len(self.rows),
            "n_valid": len(self.valid_rows),
            "extremes": None if self.extremes is None else self.extremes.to_dict(),
            "default_score": ScoreVariant.CORRECTED.value,
            "note": "score_literal is the plain product e_norm*f_norm; it is reported but "
                    "never used for selection by default",
            "best": {},
            "pareto_front": [r.to_dict() for r in pareto_front(self)] if self.valid_rows else [],
        }
        for v in ScoreVariant:
            try:
                out["best"][v.value] = best_point(self, v).to_dict()
            except SweepError:
                out["best"][v.value] = None
        return out

    def summary_json(self, path=None) -> str:
        text = json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


class SchemaError(ValueError):
    def __init__(self, header):
        self.header = tuple(header)
        missing = [c for c in CSV_COLUMNS if c not in self.header]
        extra = [c for c in self.header if c not in CSV_COLUMNS]
        super().__init__(f"CSV schema mismatch; missing={missing} unexpected={extra}")
        self.missing, self.extra = missing, extra


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if not math.isfinite(x):
            return ""
        return repr(x)
    return str(x)


def _opt(s: str) -> float | None:
    return None if s == "" else float(s)


def best_point(table: ScoreTable, variant: ScoreVariant | str = ScoreVariant.CORRECTED) -> ScoreRow:
    """Highest-scoring valid row; ties go to lower energy, then lower supply, then row order."""
    variant = ScoreVariant(variant)
    best = None
    best_key = None
    for k, row in enumerate(table.rows):
        if not row.valid or row.score(variant) is None:
            continue
        key = (-row.score(variant), row.record.e_spike, row.record.v_supp, k)
        if best_key is None or key < best_key:
            best, best_key = row, key
    if best is None:
        raise SweepError("no valid rows to select from")
    return best


def pareto_front(table: ScoreTable) -> list[ScoreRow]:
    """Valid rows not dominated in (max f_spike, min e_spike), by f ascending."""
    valid = [(k, r) for k, r in enumerate(table.rows) if r.valid]
    if not valid:
        raise SweepError("no valid rows")
    front = []
    for k, r in valid:
        f, e = r.record.f_spike, r.record.e_spike
        dominated = False
        for j, o in valid:
            if j == k:
                continue
            fo, eo = o.record.f_spike, o.record.e_spike
            if fo >= f and eo <= e and (fo > f or eo < e):
                dominated = True
                break
        if not dominated:
            front.append((f, e, k, r))
    front.sort(key=lambda x: (x[0], x[1], x[2]))
    return [x[3] for x in front]


# -- voltage averaging (capacitance maps) ----------------------------------------


@dataclass(frozen=True)
class AveragedCell:
    c_mem: float | None
    c_res: float
    f_spike: float | None
    e_spike: float | None
    n: int
    score_corrected: float | None = None


def voltage_average(table: ScoreTable, v_range: tuple[float, float] | None = None,
                    mode: str = "metrics") -> list[AveragedCell]:
    """Average valid rows over the supply axis, per (c_mem, c_res).

    ``mode="metrics"`` averages f and E and then scores the averaged grid
    against its own extremes; ``mode="scores"`` averages the per-row
    corrected scores instead.
    """
    if not table.rows:
        return []
    kind = table.rows[0].record.kind
    lo, hi = v_range if v_range is not None else VOLTAGE_AVERAGE_RANGE[kind]
    keys: list = []
    acc: dict = {}
    for row in table.rows:
        r = row.record
        key = (None if r.c_mem is None else _ff(r.c_mem), _ff(r.c_res))
        if key not in acc:
            acc[key] = []
            keys.append(key)
        if row.valid and lo - 1e-9 <= r.v_supp <= hi + 1e-9:
            acc[key].append(row)
    cells = []
    for key in keys:
        rs = acc[key]
        cm = None if key[0] is None else key[0] * 1e-15
        if not rs:
            cells.append(AveragedCell(cm, key[1] * 1e-15, None, None, 0))
            continue
        f = float(np.mean([x.record.f_spike for x in rs]))
        e = float(np.mean([x.record.e_spike for x in rs]))
        sc = float(np.mean([x.score_corrected for x in rs])) if mode == "scores" else None
        cells.append(AveragedCell(cm, key[1] * 1e-15, f, e, len(rs), sc))
    if mode == "metrics":
        ok = [c for c in cells if c.n]
        if ok:
            ext = Extremes(min(c.e_spike for c in ok), max(c.e_spike for c in ok),
                           min(c.f_spike for c in ok), max(c.f_spike for c in ok))
            cells = [replace(c, score_corrected=score(*normalize(c.e_spike, c.f_spike, ext)))
                     if c.n else c for c in cells]
    elif mode != "scores":
        raise SweepError(f"unknown averaging mode {mode!r}")
    return cells


__all__ = [
    "CSV_COLUMNS",
    "Extremes",
    "Level",
    "SchemaError",
    "ScoreRow",
    "ScoreTable",
    "ScoreVariant",
    "SweepError",
    "SweepSpec",
    "VOLTAGE_AVERAGE_RANGE",
    "best_point",
    "default_capacitances",
    "default_voltages",
    "expand_grid",
    "normalize",
    "pareto_front",
    "run_sweep",
    "score",
    "voltage_average",
    "worker_count",
]
