"""Command-line entry point: ``spikeforge {sim,sweep,report,validate}``.

Exit codes: 0 success, 1 runtime or solver failure, 2 usage or config error.
Physical values accept SI suffixes (``0.2``, ``100n``, ``1f``, ``1fF``).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import oracles
from .devmodel import DevicePreset, get_preset
from .metrics import (DISCARD_FIRST, ENERGY_CYCLES, analyze_trace, default_horizon, measure_behavioral,
                      simulate, simulate_behavioral)
from .netlist import ConstructionError, NeuronConfig, NeuronKind
from .solver import SolverError, SolverOptions
from .sweep import (VOLTAGE_AVERAGE_RANGE, Level, SchemaError, ScoreTable, SweepError, SweepSpec,
                    best_point, run_sweep, voltage_average)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

_PREFIX = {"f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "m": 1e-3, "k": 1e3, "M": 1e6, "G": 1e9}
_UNITS = ("Hz", "Ohm", "V", "A", "F", "s", "W", "J")
_SI_RE = re.compile(r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*([fpnumkMG]?)(" +
                    "|".join(_UNITS) + r")?\s*$")


class ConfigError(ValueError):
    pass


def parse_si(text) -> float:
    """``"100n"`` -> 1e-7; plain numbers pass through."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    m = _SI_RE.match(str(text))
    if not m:
        raise ValueError(f"not an SI quantity: {text!r}")
    num, prefix, _ = m.groups()
    return float(num) * _PREFIX.get(prefix, 1.0)


def _si_arg(text: str) -> float:
    try:
        return parse_si(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _si_list_arg(text: str) -> list[float]:
    try:
        return [parse_si(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _bias_arg(text: str) -> tuple[str, float]:
    key, sep, val = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"bias must look like name=value, got {text!r}")
    return key.strip(), _si_arg(val)


# -- run configuration ------------------------------------------------------------


@dataclass
class RunConfig:
    """Merged view of a JSON config file and command-line flags."""

    kind: str = "LIF"
    level: str = "circuit"
    v_supp: float = 0.2
    c_mem: float | None = 1e-15
    c_res: float = 1e-15
    i_syn: float = 100e-9
    t_end: float | None = None
    preset: str | dict = "finfet7-like"
    preset_file: str | None = None
    bias: dict = field(default_factory=dict)
    out: str = "out"
    seed: int = 0  # reserved; every command is deterministic
    workers: int | None = None
    static: bool = True
    solver: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | None, overrides: dict) -> "RunConfig":
        data = {}
        if path:
            try:
                with open(path) as fh:
                    data = json.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError("config root must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        si_keys = ("v_supp", "c_mem", "c_res", "i_syn", "t_end")
        for k in si_keys:
            if data.get(k) is not None:
                try:
                    data[k] = parse_si(data[k])
                except ValueError as exc:
                    raise ConfigError(str(exc)) from None
        for k, v in overrides.items():
            if v is None:
                continue
            if k in ("bias", "sweep", "solver") and isinstance(v, dict):
                merged = dict(data.get(k, {}))
                merged.update(v)
                data[k] = merged
            else:
                data[k] = v
        return cls(**data)

    def device_preset(self) -> DevicePreset:
        if self.preset_file:
            try:
                with open(self.preset_file) as fh:
                    return DevicePreset.from_dict(json.load(fh))
            except OSError as exc:
                raise ConfigError(f"cannot read preset file {self.preset_file}: {exc}") from None
            except (KeyError, ValueError, TypeError) as exc:
                raise ConfigError(f"bad preset file {self.preset_file}: {exc}") from None
        if isinstance(self.preset, dict):
            try:
                return DevicePreset.from_dict(self.preset)
            except (KeyError, ValueError, TypeError) as exc:
                raise ConfigError(f"bad inline preset: {exc}") from None
        try:
            return get_preset(self.preset)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None

    def solver_options(self) -> SolverOptions:
        try:
            return SolverOptions(**{k: (parse_si(v) if isinstance(v, str) else v)
                                    for k, v in self.solver.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad solver options: {exc}") from None

    def neuron(self) -> NeuronConfig:
        try:
            return NeuronConfig(NeuronKind.parse(self.kind), self.v_supp, self.c_mem, self.c_res,
                                i_syn=self.i_syn, bias=self.bias, preset=self.device_preset())
        except (ConstructionError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def sweep_spec(self) -> SweepSpec:
        sw = {k: [parse_si(x) for x in v] if isinstance(v, list) else v for k, v in self.sweep.items()}
        allowed = {"v_supp_values", "c_mem_values", "c_res_values"}
        if set(sw) - allowed:
            raise ConfigError(f"unknown sweep keys: {sorted(set(sw) - allowed)}")
        try:
            return SweepSpec(NeuronKind.parse(self.kind), Level(self.level), i_syn=self.i_syn,
                             solver=self.solver_options(), preset=self.device_preset(), bias=dict(self.bias),
                             with_static=self.static, **sw)
        except (SweepError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def out_dir(self) -> Path:
        p = Path(self.out)
        try:
            p.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output directory {p} not writable: {exc}") from None
        if not os.access(p, os.W_OK):
            raise ConfigError(f"output directory {p} not writable")
        return p


# -- commands ---------------------------------------------------------------------


def _err(msg: str) -> None:
    print(f"spikeforge: {msg}", file=sys.stderr)


def _dump_json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def cmd_sim(cfg: RunConfig) -> int:
    neuron = cfg.neuron()
    out = cfg.out_dir()
    stem = f"{neuron.kind.value.lower()}_{cfg.level}"
    need = DISCARD_FIRST + ENERGY_CYCLES + 1
    if cfg.level == "behavioral":
        tr = simulate_behavioral(neuron, n_spikes=need, t_end=cfg.t_end)
        rec = measure_behavioral(neuron)
        tr.to_csv(out / f"{stem}_waveform.csv")
    elif cfg.level == "circuit":
        opt = cfg.solver_options()
        try:
            if cfg.t_end is not None:
                tr = simulate(neuron, opt, t_end=cfg.t_end)
            else:
                tr = simulate(neuron, opt, t_end=default_horizon(neuron, need), n_spikes=need)
        except SolverError as exc:
            _err(f"solver failure: {exc}")
            return EXIT_RUNTIME
        rec = analyze_trace(tr, neuron)
        tr.to_csv(out / f"{stem}_waveform.csv")
    else:
        raise ConfigError(f"unknown level {cfg.level!r}")
    _dump_json(rec.to_dict(), out / f"{stem}_metrics.json")
    print(f"{neuron.kind.value} {cfg.level}: f_spike={rec.f_spike:.6g} Hz "
          f"e_spike={'-' if rec.e_spike is None else f'{rec.e_spike:.6g} J'} "
          f"pattern={rec.pattern.value} settled={rec.settled}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    spec = cfg.sweep_spec()
    out = cfg.out_dir()
    stem = f"{spec.kind.value.lower()}_{spec.level.value}_sweep"

    def progress(k, n):
        print(f"\r{k}/{n} configurations", end="" if k < n else "\n", file=sys.stderr, flush=True)

    try:
        table = run_sweep(spec, workers=cfg.workers, progress=progress)
    except SweepError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    table.to_csv(out / f"{stem}.csv")
    table.summary_json(out / f"{stem}_summary.json")
    print(f"{len(table)} rows ({len(table.valid_rows)} valid) -> {out / (stem + '.csv')}")
    return EXIT_OK


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if x is None else (repr(x) if isinstance(x, float) else x) for x in r])


def report_tables(table: ScoreTable, v_range=None, mode: str = "metrics") -> dict[str, tuple]:
    """All derived report tables as ``name -> (header, rows)``."""
    if not table.rows:
        raise ConfigError("empty sweep table")
    kind = table.rows[0].record.kind
    cells = voltage_average(table, v_range or VOLTAGE_AVERAGE_RANGE[kind], mode=mode)
    mems = sorted({c.c_mem for c in cells}, key=lambda x: -1 if x is None else x)
    ress = sorted({c.c_res for c in cells})
    lookup = {(c.c_mem, c.c_res): c for c in cells}
    tables = {}
    head = ["c_mem_fF\\c_res_fF"] + [round(c * 1e15, 12) for c in ress]
    for name, attr in (("avg_f_spike_Hz", "f_spike"), ("avg_e_spike_J", "e_spike"),
                       ("avg_score_corrected", "score_corrected")):
        rows = []
        for m in mems:
            label = "" if m is None else round(m * 1e15, 12)
            rows.append([label] + [getattr(lookup[(m, r)], attr) if (m, r) in lookup else None for r in ress])
        tables[name] = (head, rows)

    # voltage line at the best averaged capacitor pair
    scored = [c for c in cells if c.score_corrected is not None]
    line_rows = []
    if scored:
        pick = max(scored, key=lambda c: (c.score_corrected, -c.e_spike))
        for row in table.rows:
            r = row.record
            if r.c_res == pick.c_res and r.c_mem == pick.c_mem:
                line_rows.append([r.v_supp, r.f_spike if row.valid else None, r.e_spike if row.valid else None,
                                  row.score_corrected, r.p_static, r.pattern.value])
        line_rows.sort(key=lambda x: x[0])
    tables["voltage_line"] = (["v_supp_V", "f_spike_Hz", "e_spike_J", "score_corrected", "p_static_W",
                               "pattern"], line_rows)

    static: dict[float, float | None] = {}
    for row in table.rows:
        r = row.record
        if static.get(r.v_supp) is None:
            static[r.v_supp] = r.p_static
    tables["static_power"] = (["v_supp_V", "p_static_W"], [[v, static[v]] for v in sorted(static)])

    valid = table.valid_rows
    if valid:
        best = best_point(table).record
        eps_min = min(r.record.e_spike for r in valid)
        f_max = max(r.record.f_spike for r in valid)
    else:
        best, eps_min, f_max = None, None, None

    def p_at(v):
        for key, p in static.items():
            if math.isclose(key, v, abs_tol=1e-9):
                return p
        return None

    tables["summary"] = (
        ["kind", "level", "best_v_supp_V", "best_c_mem_fF", "best_c_res_fF", "best_f_spike_Hz",
         "best_e_spike_J", "eps_min_J", "f_max_Hz", "p_static_0p1V_W", "p_static_0p9V_W"],
        [[kind.value, table.rows[0].record.level,
          None if best is None else best.v_supp,
          None if best is None or best.c_mem is None else round(best.c_mem * 1e15, 12),
          None if best is None else round(best.c_res * 1e15, 12),
          None if best is None else best.f_spike,
          None if best is None else best.e_spike,
          eps_min, f_max, p_at(0.1), p_at(0.9)]],
    )
    return tables


def cmd_report(path: str, out: str | None, mode: str = "metrics", v_range=None) -> int:
    try:
        table = ScoreTable.from_csv(path)
    except FileNotFoundError:
        raise ConfigError(f"no such sweep table: {path}") from None
    except SchemaError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    dest = Path(out) if out else Path(path).with_name(Path(path).stem + "_report")
    try:
        dest.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {dest} not writable: {exc}") from None
    for name, (head, rows) in report_tables(table, v_range, mode).items():
        _write_rows(dest / f"{name}.csv", head, rows)
    print(f"report tables -> {dest}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, current_scale: float = 1.0, quick: bool = False) -> int:
    preset = cfg.device_preset()
    results = oracles.run_all(preset, current_scale=current_scale, with_closure=not quick)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} oracles passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


# -- argument parsing ---------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    p.add_argument("--preset", help="device preset name")
    p.add_argument("--preset-file", help="JSON file holding a device preset")
    p.add_argument("--out", help="output directory")


def _add_neuron(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kind", type=str.upper, choices=[k.value for k in NeuronKind])
    p.add_argument("--level", choices=[lv.value for lv in Level])
    p.add_argument("--vsupp", type=_si_arg, help="supply voltage, e.g. 0.2")
    p.add_argument("--cmem", type=_si_arg, help="membrane capacitance, e.g. 1f")
    p.add_argument("--cres", type=_si_arg, help="reset/feedback capacitance, e.g. 1f")
    p.add_argument("--isyn", type=_si_arg, help="synaptic input current, e.g. 100n")
    p.add_argument("--bias", type=_bias_arg, action="append", help="bias override name=value")
    p.add_argument("--seed", type=int, help="reserved; outputs are deterministic")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spikeforge", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim", help="one transient run: waveform CSV plus metrics JSON")
    _add_common(p)
    _add_neuron(p)
    p.add_argument("--tend", type=_si_arg, help="simulated time; default runs until enough spikes")

    p = sub.add_parser("sweep", help="grid sweep: score table CSV plus summary JSON")
    _add_common(p)
    _add_neuron(p)
    p.add_argument("--vsupp-values", type=_si_list_arg, help="comma list of supply voltages")
    p.add_argument("--cmem-values", type=_si_list_arg, help="comma list of c_mem values")
    p.add_argument("--cres-values", type=_si_list_arg, help="comma list of c_res values")
    p.add_argument("--workers", type=int, help="worker processes (default: SPIKEFORGE_THREADS or cores)")
    p.add_argument("--no-static", action="store_true", help="skip the static-power runs")

    p = sub.add_parser("report", help="derived tables from a sweep CSV")
    p.add_argument("table", help="sweep CSV written by 'sweep'")
    p.add_argument("--out", help="output directory (default: <table>_report)")
    p.add_argument("--average", choices=("metrics", "scores"), default="metrics",
                   help="average f/E then score (default) or average the scores")
    p.add_argument("--vrange", type=_si_list_arg, help="voltage range lo,hi for averaging")

    p = sub.add_parser("validate", help="run the oracle suite")
    _add_common(p)
    p.add_argument("--inject-current-scale", type=float, default=1.0,
                   help="fault hook: scale transistor and behavioral input currents")
    p.add_argument("--quick", action="store_true", help="skip the circuit energy-closure runs")
    return ap


def _overrides(ns: argparse.Namespace) -> dict:
    g = vars(ns)
    o = {
        "kind": g.get("kind"), "level": g.get("level"), "v_supp": g.get("vsupp"), "c_mem": g.get("cmem"),
        "c_res": g.get("cres"), "i_syn": g.get("isyn"), "t_end": g.get("tend"), "preset": g.get("preset"),
        "preset_file": g.get("preset_file"), "out": g.get("out"), "seed": g.get("seed"),
        "workers": g.get("workers"),
    }
    if g.get("bias"):
        o["bias"] = dict(g["bias"])
    if g.get("no_static"):
        o["static"] = False
    sw = {k: g.get(a) for k, a in (("v_supp_values", "vsupp_values"), ("c_mem_values", "cmem_values"),
                                   ("c_res_values", "cres_values"))}
    sw = {k: v for k, v in sw.items() if v is not None}
    if sw:
        o["sweep"] = sw
    return o


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    try:
        if ns.command == "report":
            vr = tuple(ns.vrange) if ns.vrange else None
            if vr is not None and len(vr) != 2:
                raise ConfigError("--vrange needs exactly two values")
            return cmd_report(ns.table, ns.out, ns.average, vr)
        cfg = RunConfig.load(ns.config, _overrides(ns))
        if ns.command == "sim":
            return cmd_sim(cfg)
        if ns.command == "sweep":
            return cmd_sweep(cfg)
        if not ns.inject_current_scale > 0:
            raise ConfigError("--inject-current-scale must be positive")
        return cmd_validate(cfg, ns.inject_current_scale, ns.quick)
    except ConfigError as exc:
        _err(str(exc))
        ap.print_usage(sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        _err(f"solver failure: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
