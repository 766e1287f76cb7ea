"""Figures of merit: spike frequency, energy per spike, static power.

Spikes are read off the output node with a rail-ratio hysteresis detector:
a spike is a rising crossing of ``0.6 * v_supp`` that follows a visit below
``0.4 * v_supp``; its time is the linearly interpolated crossing instant.

Energy per spike integrates dissipated power over complete steady
inter-spike intervals (the last three), and is cross-checked against the
energy delivered by the sources over the same window.  At periodic steady
state the stored energy is back where it started, so the two must agree.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import behavior as bh
from .devmodel import drain_current
from .netlist import NeuronConfig, NeuronKind, build
from .solver import SolverError, SolverOptions, Trace, transient

V_HI_FRAC = 0.6
V_LO_FRAC = 0.4
DISCARD_FIRST = 3
ENERGY_CYCLES = 3
CLOSURE_TOL = 0.02
RESAMPLE_DT = 0.1e-12
MAX_RESAMPLED = 4_000_000


class MetricsError(ValueError):
    pass


class Pattern(str, Enum):
    SILENT = "silent"
    PERIODIC = "periodic"
    BURSTING = "bursting"
    IRREGULAR = "irregular"


@dataclass(frozen=True)
class IsiStats:
    mean: float
    min: float
    max: float
    cv: float

    @classmethod
    def of(cls, isi: np.ndarray) -> "IsiStats":
        if len(isi) == 0:
            return cls(math.nan, math.nan, math.nan, math.nan)
        m = float(np.mean(isi))
        return cls(m, float(np.min(isi)), float(np.max(isi)), float(np.std(isi) / m))


@dataclass(frozen=True)
class SpikeTrain:
    spike_times: np.ndarray
    pattern: Pattern
    isi_stats: IsiStats

    @classmethod
    def from_times(cls, times: Sequence[float]) -> "SpikeTrain":
        st = np.asarray(times, dtype=float)
        if len(st) > 1 and not np.all(np.diff(st) > 0):
            raise MetricsError("spike times must be strictly increasing")
        return cls(st, classify_pattern(st), IsiStats.of(np.diff(st)))

    @property
    def isi(self) -> np.ndarray:
        return np.diff(self.spike_times)

    def __len__(self):
        return len(self.spike_times)


# -- detection ------------------------------------------------------------------


def _signal(trace, node: str) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(trace, Trace):
        return trace.time, trace.node(node)
    if isinstance(trace, bh.BehavioralTrace):
        return trace.time, trace.v_m
    t, v = trace
    return np.asarray(t, dtype=float), np.asarray(v, dtype=float)


def hysteresis_crossings(t: np.ndarray, v: np.ndarray, v_hi: float, v_lo: float) -> np.ndarray:
    """Interpolated rising ``v_hi`` crossings, each re-armed by a dip below ``v_lo``."""
    below_lo = v < v_lo
    above_hi = v >= v_hi
    ev = np.flatnonzero(below_lo | above_hi)
    if len(ev) == 0:
        return np.zeros(0)
    high = above_hi[ev]
    # a spike is a high sample whose previous low/high event was low
    prev_low = np.concatenate([[False], ~high[:-1]])
    hits = ev[high & prev_low]
    hits = hits[hits > 0]
    j = hits - 1
    t0, t1, v0, v1 = t[j], t[hits], v[j], v[hits]
    return t0 + (t1 - t0) * (v_hi - v0) / (v1 - v0)


def detect_spikes(trace, v_supp: float, node: str = "spike_out") -> SpikeTrain:
    """Spike train on ``node`` (label or node name) of a trace."""
    t, v = _signal(trace, node)
    if len(t) < 2:
        raise MetricsError("need at least 2 samples to detect spikes")
    if v_supp <= 0:
        return SpikeTrain.from_times([])
    return SpikeTrain.from_times(hysteresis_crossings(t, v, V_HI_FRAC * v_supp, V_LO_FRAC * v_supp))


class SpikeCounter:
    """Incremental hysteresis detector usable as a transient ``stop`` hook."""

    def __init__(self, index: int, v_supp: float, target: int, t_after: float = 0.0):
        self.index = index
        self.v_hi = V_HI_FRAC * v_supp
        self.v_lo = V_LO_FRAC * v_supp
        self.target = target
        self.t_after = t_after
        self.count = 0
        self.armed = False
        self.t_last = None

    def __call__(self, t: float, v: np.ndarray) -> bool:
        x = v[self.index]
        if x < self.v_lo:
            self.armed = True
        elif x >= self.v_hi and self.armed:
            self.armed = False
            self.count += 1
            self.t_last = t
        return (self.count >= self.target and self.t_last is not None
                and t >= self.t_last + self.t_after)


# -- frequency / pattern --------------------------------------------------------


def spike_frequency(train: SpikeTrain | Sequence[float], discard_first: int = DISCARD_FIRST) -> float:
    """1 / mean(ISI) after dropping the first ``discard_first`` spikes."""
    st = train.spike_times if isinstance(train, SpikeTrain) else np.asarray(train, dtype=float)
    st = st[discard_first:]
    if len(st) < 2:
        return 0.0
    return 1.0 / float(np.mean(np.diff(st)))


def classify_pattern(train) -> Pattern:
    """Silent (< 4 spikes), bursting, periodic (ISI cv < 0.1) or irregular.

    Bursting needs ``max(ISI)/min(ISI) > 5`` and runs of at least two short
    ISIs separated by long ones; short/long splits at the geometric mean of
    the extremes.
    """
    st = train.spike_times if isinstance(train, SpikeTrain) else np.asarray(train, dtype=float)
    if len(st) < 4:
        return Pattern.SILENT
    isi = np.diff(st)
    lo, hi = isi.min(), isi.max()
    if lo > 0 and hi / lo > 5.0:
        short = isi < math.sqrt(hi * lo)
        runs = []
        n = 0
        for s in short:
            if s:
                n += 1
            elif n:
                runs.append(n)
                n = 0
        if n:
            runs.append(n)
        n_long = int(np.count_nonzero(~short))
        # first and last runs may be truncated by the window
        interior = runs[1:-1] if len(runs) > 2 else runs
        if n_long >= 1 and runs and max(runs) >= 2 and all(r >= 2 for r in interior):
            return Pattern.BURSTING
    cv = float(np.std(isi) / np.mean(isi))
    if cv < 0.1:
        return Pattern.PERIODIC
    return Pattern.IRREGULAR


# -- waveform structure -----------------------------------------------------------


@dataclass(frozen=True)
class RiseResetCycle:
    t_peak: float
    drop: float  # fall within the span after the peak (V)
    rise: float  # trough-to-peak rise before this peak (V)
    back_step: float  # largest cumulative fall inside that rise (V)


def rise_reset_cycles(t: np.ndarray, v: np.ndarray, v_supp: float, depth: float = 0.3,
                      span: float = 0.5e-9) -> list[RiseResetCycle]:
    """Integrate-then-reset structure of a membrane waveform.

    A reset is a peak after which ``v`` falls by at least ``depth * v_supp``
    within ``span`` seconds.  For every reset after the first, the cycle
    reports the rise from the preceding trough and how far that rise ever
    stepped backwards, so a clean sawtooth has ``back_step`` near zero.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if len(t) < 3:
        raise MetricsError("need at least 3 samples")
    thr = depth * v_supp
    # running minimum over the next ``span`` seconds, via a sliding window
    end = np.searchsorted(t, t + span, side="right")
    peaks = []
    k = 0
    n = len(t)
    while k < n - 1:
        j = end[k]
        if v[k] - v[k:j].min() >= thr:
            # climb to the local top of this reset, then skip past its trough
            while k + 1 < n and v[k + 1] >= v[k]:
                k += 1
            m = k + int(np.argmin(v[k:end[k]]))
            while m + 1 < n and v[m + 1] <= v[m]:
                m += 1
            peaks.append((k, m))
            k = m + 1
        else:
            k += 1
    cycles = []
    for (p0, m0), (p1, _) in zip(peaks, peaks[1:]):
        seg = v[m0:p1 + 1]
        run_max = np.maximum.accumulate(seg)
        back = float(np.max(run_max - seg))
        j = end[p1]
        cycles.append(RiseResetCycle(float(t[p1]), float(v[p1] - v[p1:j].min()), float(v[p1] - v[m0]), back))
    return cycles


# -- energy -----------------------------------------------------------------------


def integrate_between(t: np.ndarray, y: np.ndarray, t0: float, t1: float) -> float:
    """Exact integral of the piecewise-linear interpolant of ``y`` over [t0, t1]."""
    if t1 < t0:
        raise MetricsError("integration window reversed")
    i0 = int(np.searchsorted(t, t0, side="right"))
    i1 = int(np.searchsorted(t, t1, side="left"))
    y0 = float(np.interp(t0, t, y))
    y1 = float(np.interp(t1, t, y))
    tt = np.concatenate([[t0], t[i0:i1], [t1]])
    yy = np.concatenate([[y0], y[i0:i1], [y1]])
    return float(np.sum(0.5 * (yy[1:] + yy[:-1]) * np.diff(tt)))


def _power_series(trace, which: str):
    if isinstance(trace, Trace):
        return trace.time, (trace.p_total if which == "total" else trace.p_supply)
    t, p = trace
    return np.asarray(t, float), np.asarray(p, float)


def _energy_window(train: SpikeTrain, n_cycles: int) -> tuple[float, float, int]:
    st = train.spike_times
    if len(st) < 2:
        raise MetricsError("energy per spike needs at least 2 spikes")
    k = min(n_cycles, len(st) - 1)
    return float(st[-1 - k]), float(st[-1]), k


def energy_per_spike(trace, train: SpikeTrain, n_cycles: int = ENERGY_CYCLES) -> float:
    """Mean dissipated energy over the last ``n_cycles`` complete ISIs (J)."""
    t0, t1, k = _energy_window(train, n_cycles)
    t, p = _power_series(trace, "total")
    return integrate_between(t, p, t0, t1) / k


def supply_energy_per_spike(trace, train: SpikeTrain, n_cycles: int = ENERGY_CYCLES) -> float:
    """Same window as :func:`energy_per_spike`, integrating source power."""
    t0, t1, k = _energy_window(train, n_cycles)
    t, p = _power_series(trace, "supply")
    return integrate_between(t, p, t0, t1) / k


def energy_mismatch(e_total: float, e_supply: float) -> float:
    if e_supply == 0:
        return math.inf if e_total else 0.0
    return abs(e_supply - e_total) / abs(e_supply)


# -- records ----------------------------------------------------------------------


@dataclass
class MetricsRecord:
    kind: NeuronKind
    v_supp: float
    c_mem: float | None
    c_res: float
    i_syn: float
    f_spike: float = 0.0
    e_spike: float | None = None
    p_static: float | None = None
    pattern: Pattern = Pattern.SILENT
    converged: bool = True
    settled: bool = False
    level: str = "circuit"
    n_spikes: int = 0
    e_supply: float | None = None
    error: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return (self.converged and self.settled and self.pattern is not Pattern.SILENT
                and self.f_spike > 0 and self.e_spike is not None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["pattern"] = self.pattern.value
        return d

    @classmethod
    def for_config(cls, cfg: NeuronConfig, level: str = "circuit", **kw) -> "MetricsRecord":
        return cls(kind=cfg.kind, v_supp=cfg.v_supp, c_mem=cfg.c_mem, c_res=cfg.c_res,
                   i_syn=cfg.i_syn, level=level, **kw)


# -- circuit-level driver ---------------------------------------------------------


def charge_time_estimate(cfg: NeuronConfig) -> float:
    """Rough time for the input to move the cell's capacitance by V_supp."""
    if cfg.i_syn <= 0 or cfg.v_supp <= 0:
        return math.inf
    c = cfg.c_res + (cfg.c_mem or 0.0)
    return cfg.v_supp * c / cfg.i_syn


def default_horizon(cfg: NeuronConfig, n_spikes: int) -> float:
    """Simulated-time cap for a measurement run."""
    est = charge_time_estimate(cfg)
    if not math.isfinite(est):
        return 50e-9
    return float(min(max(3.0 * n_spikes * est, 30e-9), 3e-6))


def simulate(cfg: NeuronConfig, opt: SolverOptions | None = None, *, t_end: float | None = None,
             n_spikes: int | None = None) -> Trace:
    """Transient of one configuration, optionally stopping after ``n_spikes``."""
    ckt = build(cfg)
    opt = opt or SolverOptions()
    if t_end is not None:
        opt = opt.with_(t_end=t_end)
    stop = None
    if n_spikes:
        idx = ckt.nodes.index(ckt.labels["spike_out"])
        est = charge_time_estimate(cfg)
        # run a little past the last spike so its ISI window closes cleanly
        tail = 0.05 * est if math.isfinite(est) else 0.0
        stop = SpikeCounter(idx, cfg.v_supp, n_spikes, t_after=tail)
    return transient(ckt, opt, stop=stop)


def _window_resampled(tr: Trace, t0: float, t1: float, dt: float):
    n = int(math.floor((t1 - t0) / dt)) + 1
    if n > MAX_RESAMPLED:
        n = MAX_RESAMPLED
        dt = (t1 - t0) / (n - 1)
    t = t0 + dt * np.arange(n)
    out = np.interp(t, tr.time, tr.node("spike_out"))
    return t, out, np.interp(t, tr.time, tr.p_total), np.interp(t, tr.time, tr.p_supply)


def analyze_trace(tr: Trace, cfg: NeuronConfig, *, discard_first: int = DISCARD_FIRST,
                  n_cycles: int = ENERGY_CYCLES, resample_dt: float = RESAMPLE_DT) -> MetricsRecord:
    """Frequency, energy, pattern of one circuit run.

    Spikes are located on the raw samples first; the analysis window (last
    complete cycles) is then resampled uniformly, re-detected and integrated.
    """
    rec = MetricsRecord.for_config(cfg, converged=tr.dc_converged)
    rec.extra["stats"] = dict(tr.stats)
    rec.extra["cold_start"] = tr.cold_start
    coarse = detect_spikes(tr, cfg.v_supp)
    rec.n_spikes = len(coarse)
    settled_spikes = coarse.spike_times[discard_first:]
    if len(settled_spikes) < 2:
        rec.pattern = classify_pattern(coarse)
        rec.f_spike = 0.0
        return rec
    # uniform window spanning the settled spikes, from just before the first
    pre = 0.25 * float(np.min(np.diff(settled_spikes)))
    t0 = max(tr.time[0], settled_spikes[0] - pre)
    t1 = tr.time[-1]
    t, vs, pt, ps = _window_resampled(tr, t0, t1, resample_dt)
    fine = hysteresis_crossings(t, vs, V_HI_FRAC * cfg.v_supp, V_LO_FRAC * cfg.v_supp)
    if len(fine) < 2:
        fine = settled_spikes
    train = SpikeTrain.from_times(fine)
    rec.pattern = classify_pattern(train)
    rec.f_spike = spike_frequency(train, discard_first=0)
    rec.e_spike = energy_per_spike((t, pt), train, n_cycles)
    rec.e_supply = supply_energy_per_spike((t, ps), train, n_cycles)
    mismatch = energy_mismatch(rec.e_spike, rec.e_supply)
    rec.extra["energy_mismatch"] = mismatch
    rec.settled = len(train) >= n_cycles + 1 and mismatch <= CLOSURE_TOL
    return rec


def measure(cfg: NeuronConfig, opt: SolverOptions | None = None, *, level: str = "circuit",
            discard_first: int = DISCARD_FIRST, n_cycles: int = ENERGY_CYCLES,
            t_max: float | None = None, with_static: bool = False) -> MetricsRecord:
    """Full metrics record for one configuration; solver failures are captured."""
    if level == "behavioral":
        return measure_behavioral(cfg, discard_first=discard_first, n_cycles=n_cycles)
    if level != "circuit":
        raise MetricsError(f"unknown level {level!r}")
    need = discard_first + n_cycles + 1
    horizon = t_max if t_max is not None else default_horizon(cfg, need)
    try:
        tr = simulate(cfg, opt, t_end=horizon, n_spikes=need)
    except SolverError as exc:
        return MetricsRecord.for_config(cfg, converged=False, error=str(exc))
    rec = analyze_trace(tr, cfg, discard_first=discard_first, n_cycles=n_cycles)
    if with_static:
        try:
            rec.p_static = static_power(cfg, opt)
        except (SolverError, MetricsError) as exc:
            rec.error = f"static: {exc}"
    return rec


def static_power(cfg: NeuronConfig, opt: SolverOptions | None = None, *, t_end: float = 50e-9,
                 window: float = 0.2) -> float:
    """Mean source power with zero synaptic input over the final ``window`` fraction."""
    if cfg.v_supp == 0:
        return 0.0
    quiet = cfg.with_(i_syn=0.0)
    opt = (opt or SolverOptions()).with_(t_end=t_end)
    tr = transient(build(quiet), opt)
    t0 = t_end * (1.0 - window)
    train = detect_spikes(tr, quiet.v_supp)
    if np.any(train.spike_times >= t0):
        raise MetricsError("cell spikes with zero input; no static operating point")
    return integrate_between(tr.time, tr.p_supply, t0, t_end) / (t_end - t0)


# -- behavioral level -------------------------------------------------------------

#: leak resistance of the behavioral LIF (weak: R*I >> threshold at 100 nA)
BEHAV_LIF_R = 1e8
#: leak conductance of the behavioral AH
BEHAV_AH_GL = 1e-9
#: time compression mapping the canonical Morris-Lecar set onto ns scales
BEHAV_ML_TIME = 1e6
BEHAV_ML_SPAN = 0.204  # e_ca - e_k of the canonical set
BEHAV_ML_CREF = 1e-15


def behavioral_lif(cfg: NeuronConfig) -> bh.LifParams:
    return bh.LifParams.from_capacitance(cfg.c_mem, BEHAV_LIF_R, 0.0, 0.5 * cfg.v_supp)


def behavioral_ah(cfg: NeuronConfig) -> bh.AhParams:
    nmos = cfg.preset.nmos
    i_on = abs(drain_current(nmos, cfg.v_supp, 0.0, cfg.v_supp, 0.0))
    return bh.AhParams(c=cfg.c_res, g_l=BEHAV_AH_GL, v_rest=0.0, v_th=0.5 * cfg.v_supp,
                       i_reset=max(i_on, 1e-15), v_floor=0.0)


def behavioral_ml(cfg: NeuronConfig) -> bh.MlParams:
    """Canonical set rescaled onto ns time and V_supp voltage scales.

    Conductances and the input are fixed for a 1 fF reference capacitance;
    ``c = c_mem`` then stretches the voltage dynamics with the capacitor.
    """
    base = bh.MlParams()
    a = BEHAV_ML_CREF / base.c
    s = cfg.v_supp / BEHAV_ML_SPAN
    k = BEHAV_ML_TIME
    g = base.gating
    gate = bh.MlGating(v1=g.v1 * s, v2=g.v2 * s, v3=g.v3 * s, v4=g.v4 * s, phi=g.phi * k)
    # input scales with i_syn relative to the 100 nA reference point
    i_ext = base.i_ext * a * k * s * (cfg.i_syn / 100e-9)
    return bh.MlParams(c=cfg.c_mem, i_ext=i_ext, g_ca=base.g_ca * a * k, g_k=base.g_k * a * k,
                       g_l=base.g_l * a * k, e_ca=base.e_ca * s, e_k=base.e_k * s, e_l=base.e_l * s,
                       gating=gate)


def simulate_behavioral(cfg: NeuronConfig, *, n_spikes: int = DISCARD_FIRST + ENERGY_CYCLES + 1,
                        t_end: float | None = None) -> bh.BehavioralTrace:
    """Behavioral-model run for ``cfg``, long enough for about ``n_spikes`` spikes."""
    syn = bh.SynParams.constant(cfg.i_syn)
    if cfg.kind is NeuronKind.LIF:
        p = behavioral_lif(cfg)
        if t_end is None:
            rate = bh.lif_rate_closed_form(p, cfg.i_syn)
            t_end = (n_spikes + 1) / rate if rate > 0 else 50e-9
        return bh.simulate_lif(p, syn, t_end)
    if cfg.kind is NeuronKind.AH:
        p = behavioral_ah(cfg)
        if t_end is None:
            est = bh.ah_period_estimate(p, cfg.i_syn) if cfg.i_syn > 0 else math.inf
            t_end = (n_spikes + 1) * est if math.isfinite(est) else 50e-9
        return bh.simulate_ah(p, syn, t_end)
    p = behavioral_ml(cfg)
    stretch = cfg.c_mem / BEHAV_ML_CREF
    if t_end is None:
        t_end = 0.12e-6 * (n_spikes + 2) * stretch
    return bh.simulate_ml(p, t_end, dt=2.5e-11 * stretch, v_spike=0.5 * (p.e_ca + p.e_k))


def measure_behavioral(cfg: NeuronConfig, *, discard_first: int = DISCARD_FIRST,
                       n_cycles: int = ENERGY_CYCLES) -> MetricsRecord:
    """Metrics from the behavioral model mapped from ``cfg``.

    Energy per spike is the supply view: ``V_supp`` times the input charge
    drawn over one ISI, plus ``c_res * V_supp^2`` for the reset capacitor
    charged and dumped once per spike.
    """
    rec = MetricsRecord.for_config(cfg, level="behavioral")
    need = discard_first + n_cycles + 1
    if cfg.i_syn <= 0 or cfg.v_supp <= 0:
        return rec
    tr = simulate_behavioral(cfg, n_spikes=need)
    train = SpikeTrain.from_times(tr.spike_times)
    rec.n_spikes = len(train)
    settled = train.spike_times[discard_first:]
    rec.pattern = classify_pattern(train)
    if len(settled) < 2:
        return rec
    tail = SpikeTrain.from_times(settled)
    rec.f_spike = spike_frequency(tail, discard_first=0)
    t0, t1, k = _energy_window(tail, n_cycles)
    q_in = cfg.i_syn * (t1 - t0) / k
    rec.e_spike = cfg.v_supp * q_in + cfg.c_res * cfg.v_supp ** 2
    rec.e_supply = rec.e_spike
    rec.settled = len(tail) >= n_cycles + 1
    return rec


__all__ = [
    "IsiStats",
    "RiseResetCycle",
    "MetricsError",
    "MetricsRecord",
    "Pattern",
    "SpikeCounter",
    "SpikeTrain",
    "analyze_trace",
    "classify_pattern",
    "detect_spikes",
    "energy_per_spike",
    "measure",
    "measure_behavioral",
    "rise_reset_cycles",
    "simulate",
    "simulate_behavioral",
    "spike_frequency",
    "static_power",
    "supply_energy_per_spike",
]
