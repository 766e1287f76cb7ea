"""Independent numerical checks run by ``spikeforge validate``.

Each oracle compares the toolkit against something it does not share code
with: central finite differences, the RC closed form, the LIF interspike
formula, and the supply-side view of the energy balance.  ``current_scale``
is a fault hook: it perturbs transistor currents (and the behavioral input)
so the suite can demonstrate that its checks fail independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import product

import numpy as np

from . import behavior as bh
from .devmodel import DeviceParams, DevicePreset, PRESETS, drain_current, drain_current_derivs
from .metrics import measure
from .netlist import Capacitor, Circuit, NeuronConfig, NeuronKind, Resistor
from .solver import SolverOptions, transient

JACOBIAN_RTOL = 1e-4
SWING_RANGE = (60e-3, 80e-3)
RC_RTOL = 1e-3
ORDER_RATIO_RANGE = (3.0, 5.0)
LIF_RTOL = 0.01
CLOSURE_RTOL = 0.01


@dataclass(frozen=True)
class OracleResult:
    name: str
    passed: bool
    value: float
    limit: str
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.value:.4g} (limit {self.limit}) {self.detail}".rstrip()


def terminal_grid(n: int = 5, v_max: float = 0.8) -> list[tuple[float, float, float]]:
    """(v_g, v_d, v_s) triples; 5 levels each gives 125 points."""
    lv = np.linspace(0.0, v_max, n)
    return [tuple(float(x) for x in p) for p in product(lv, lv, lv)]


def jacobian_error(p: DeviceParams, grid=None, h: float = 1e-6, v_b: float | None = None) -> float:
    """Worst per-point relative error of the analytic partials vs central differences.

    Errors are scaled by the largest partial at the point, so a partial that
    vanishes by symmetry does not blow up the ratio.
    """
    grid = grid or terminal_grid()
    if v_b is None:
        v_b = 0.0 if p.polarity.value == "N" else max(max(g) for g in grid)
    worst = 0.0
    for vg, vd, vs in grid:
        an = np.array(drain_current_derivs(p, vg, vs, vd, v_b))
        fd = np.array([
            (drain_current(p, vg + h, vs, vd, v_b) - drain_current(p, vg - h, vs, vd, v_b)) / (2 * h),
            (drain_current(p, vg, vs, vd + h, v_b) - drain_current(p, vg, vs, vd - h, v_b)) / (2 * h),
            (drain_current(p, vg, vs + h, vd, v_b) - drain_current(p, vg, vs - h, vd, v_b)) / (2 * h),
        ])
        scale = np.max(np.abs(an))
        if scale == 0:
            continue
        worst = max(worst, float(np.max(np.abs(fd - an)) / scale))
    return worst


def measured_swing(p: DeviceParams, v_ds: float = 0.4, span: tuple[float, float] = (0.0, 0.05)) -> float:
    """Subthreshold swing (V/decade) from two gate-voltage points."""
    s = p.polarity.sign
    i0 = abs(drain_current(p, s * span[0], 0.0, s * v_ds, 0.0))
    i1 = abs(drain_current(p, s * span[1], 0.0, s * v_ds, 0.0))
    return (span[1] - span[0]) / math.log10(i1 / i0)


def check_device(preset: DevicePreset | None = None, current_scale: float = 1.0) -> list[OracleResult]:
    preset = preset or PRESETS["finfet7-like"]
    out = []
    for dev in (preset.nmos, preset.pmos):
        dev = replace(dev, i_spec=dev.i_spec * current_scale)
        err = jacobian_error(dev)
        out.append(OracleResult(f"jacobian-vs-fd {dev.polarity.value}MOS", err <= JACOBIAN_RTOL, err,
                                f"<= {JACOBIAN_RTOL:g}", "125-point grid"))
        sw = measured_swing(dev)
        ok = SWING_RANGE[0] <= sw <= SWING_RANGE[1]
        out.append(OracleResult(f"subthreshold swing {dev.polarity.value}MOS", ok, sw * 1e3,
                                "60..80 mV/dec"))
    return out


def rc_circuit(r: float = 1e6, c: float = 1e-15) -> Circuit:
    return Circuit(nodes=("n1",), elements=(Resistor("R1", r, "n1", "0"), Capacitor("C1", c, "n1", "0")),
                   name="rc")


def rc_errors(r: float = 1e6, c: float = 1e-15, v0: float = 0.5, opt: SolverOptions | None = None):
    """Max relative error of an RC discharge over 5 tau, and the fixed-step halving ratio."""
    opt = opt or SolverOptions()
    g = 1.0 / r + opt.gmin  # the solver's gmin shunt is part of the exact answer
    tau = c / g
    ckt = rc_circuit(r, c)
    tr = transient(ckt, opt.with_(t_end=5 * tau), initial={"n1": v0})
    exact = v0 * np.exp(-tr.time / tau)
    rel = float(np.max(np.abs(tr.node("n1") - exact) / exact))

    def fixed(dt):
        o = opt.with_(t_end=5 * tau, fixed_step=True, dt_init=dt, dt_max=max(dt, opt.dt_max))
        t = transient(ckt, o, initial={"n1": v0})
        return float(np.max(np.abs(t.node("n1") - v0 * np.exp(-t.time / tau))))

    coarse = tau / 25
    ratio = fixed(coarse) / fixed(coarse / 2)
    return rel, ratio


def check_rc(opt: SolverOptions | None = None) -> list[OracleResult]:
    rel, ratio = rc_errors(opt=opt)
    return [
        OracleResult("rc discharge vs closed form", rel <= RC_RTOL, rel, f"<= {RC_RTOL:g}", "adaptive, 5 tau"),
        OracleResult("fixed-step error ratio on halving", ORDER_RATIO_RANGE[0] <= ratio <= ORDER_RATIO_RANGE[1],
                     ratio, "3..5"),
    ]


#: (c_eff, r_mem, v_th - v_rest, i_in, t_ref)
LIF_POINTS = (
    (1e-15, 1e12, 0.1, 100e-9, 0.0),   # charge-to-threshold: C dV / I = 1 ns
    (1e-15, 2e6, 0.1, 100e-9, 0.2e-9),  # leaky, refractory
    (10e-15, 5e5, 0.2, 1e-6, 0.0),      # tau = 5 ns
)


def lif_rate_errors(current_scale: float = 1.0, points=LIF_POINTS) -> list[tuple[float, float]]:
    """(simulated rate, closed-form rate) per point."""
    out = []
    for c, r, dv, i_in, t_ref in points:
        p = bh.LifParams.from_capacitance(c, r, 0.0, dv, t_ref=t_ref)
        rate = bh.lif_rate_closed_form(p, i_in)
        tr = bh.simulate_lif(p, bh.SynParams.constant(i_in), 12.0 / rate, current_scale=current_scale)
        st = tr.spike_times
        sim = (len(st) - 1) / (st[-1] - st[0]) if len(st) > 1 else 0.0
        out.append((sim, rate))
    return out


def check_lif(current_scale: float = 1.0) -> list[OracleResult]:
    out = []
    for k, (sim, ref) in enumerate(lif_rate_errors(current_scale)):
        err = abs(sim - ref) / ref
        out.append(OracleResult(f"lif rate vs interspike formula #{k + 1}", err <= LIF_RTOL, err,
                                f"<= {LIF_RTOL:g}", f"sim {sim:.6g} Hz, formula {ref:.6g} Hz"))
    return out


def check_closure(preset: DevicePreset | None = None, current_scale: float = 1.0,
                  kinds=tuple(NeuronKind)) -> list[OracleResult]:
    preset = preset or PRESETS["finfet7-like"]
    opt = SolverOptions(current_scale=current_scale)
    out = []
    for kind in kinds:
        cfg = NeuronConfig(kind, 0.2, 1e-15, 1e-15, i_syn=100e-9, preset=preset)
        rec = measure(cfg, opt)
        if rec.e_spike is None or rec.e_supply is None:
            out.append(OracleResult(f"energy closure {kind.value}", False, math.nan, f"<= {CLOSURE_RTOL:g}",
                                    rec.error or "no settled spikes"))
            continue
        mis = abs(rec.e_supply - rec.e_spike) / abs(rec.e_supply)
        out.append(OracleResult(f"energy closure {kind.value}", mis <= CLOSURE_RTOL, mis,
                                f"<= {CLOSURE_RTOL:g}", "final 3 ISIs"))
    return out


def run_all(preset: DevicePreset | None = None, current_scale: float = 1.0,
            with_closure: bool = True) -> list[OracleResult]:
    results = check_device(preset, current_scale) + check_rc() + check_lif(current_scale)
    if with_closure:
        results += check_closure(preset, current_scale)
    return results
