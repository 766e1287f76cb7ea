"""Behavioral ODE neuron models.

Fast reference models for the three cells:

* LIF: ``tau_m dV/dt = -(V - v_rest) + R I_in(t)`` with threshold, reset and an
  optional refractory hold.
* Morris-Lecar: calcium/potassium/leak conductances with the canonical
  hyperbolic gating functions, plus an optional slow outward current ``z``
  that turns tonic firing into square-wave bursting.
* Axon-hillock: a single capacitor that charges from the input and, once at
  threshold, discharges at a finite current down to a floor.

All integrators are fixed-step RK4 on plain floats.  Threshold events are
located by linear interpolation inside the step and the remainder of the
step is re-integrated from the post-event state, so spike times do not
quantize to the grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np


class BehaviorError(ValueError):
    """Bad step configuration or parameters for a behavioral run."""


# -- synaptic input -------------------------------------------------------------


@dataclass(frozen=True)
class SynParams:
    """Synaptic drive.

    ``tonic=True`` ignores ``event_times`` and delivers a constant ``i0``.
    Otherwise every event launches an exponential kernel and kernels add.
    """

    i0: float
    tau_syn: float = 1e-9
    event_times: tuple[float, ...] = ()
    tonic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "event_times", tuple(sorted(float(t) for t in self.event_times)))
        if self.i0 < 0:
            raise BehaviorError("i0 must be >= 0")
        if not self.tau_syn > 0:
            raise BehaviorError("tau_syn must be > 0")

    @classmethod
    def constant(cls, i0: float) -> "SynParams":
        return cls(i0=i0, tonic=True)


def syn_current(p: SynParams, t: float) -> float:
    """Input current at time ``t`` (A)."""
    if p.tonic:
        return p.i0
    total = 0.0
    for tk in p.event_times:
        if tk > t:
            break
        total += math.exp(-(t - tk) / p.tau_syn)
    return p.i0 * total


def _syn_fn(p: SynParams, scale: float) -> Callable[[float], float]:
    if p.tonic:
        i = p.i0 * scale
        return lambda t: i
    return lambda t: scale * syn_current(p, t)


# -- traces -------------------------------------------------------------------


@dataclass
class BehavioralTrace:
    time: np.ndarray
    v_m: np.ndarray
    gating: dict[str, np.ndarray] = field(default_factory=dict)
    spike_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    derived: dict[str, np.ndarray] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        """``time_s, v_m`` then one column per gating variable."""
        names = list(self.gating)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "v_m"] + names)
            cols = [self.time, self.v_m] + [self.gating[n] for n in names]
            for row in zip(*cols):
                w.writerow([repr(float(x)) for x in row])

    @property
    def rate(self) -> float:
        """Mean firing rate from the spike times (0 with < 2 spikes)."""
        st = self.spike_times
        if len(st) < 2:
            return 0.0
        return (len(st) - 1) / (st[-1] - st[0])


def _grid(t_end: float, dt: float) -> tuple[int, float]:
    if not (t_end > 0 and dt > 0 and math.isfinite(t_end) and math.isfinite(dt)):
        raise BehaviorError(f"invalid t_end/dt: {t_end}, {dt}")
    n = int(math.ceil(t_end / dt - 1e-9))
    if n > 50_000_000:
        raise BehaviorError(f"{n} steps requested; increase dt")
    return n, t_end / n


# -- LIF ------------------------------------------------------------------------


@dataclass(frozen=True)
class LifParams:
    """Leaky integrate-and-fire parameters.

    ``c_eff = tau_m / r_mem`` is the implied membrane capacitance.
    """

    tau_m: float
    v_rest: float
    r_mem: float
    v_th: float
    v_reset: float
    t_ref: float = 0.0

    def __post_init__(self):
        if not (self.tau_m > 0 and self.r_mem > 0):
            raise BehaviorError("tau_m and r_mem must be > 0")
        if not self.v_th > self.v_rest:
            raise BehaviorError("v_th must exceed v_rest")
        if not self.v_reset < self.v_th:
            raise BehaviorError("v_reset must lie below v_th")
        if self.t_ref < 0:
            raise BehaviorError("t_ref must be >= 0")

    @property
    def c_eff(self) -> float:
        return self.tau_m / self.r_mem

    @classmethod
    def from_capacitance(cls, c_eff, r_mem, v_rest, v_th, v_reset=None, t_ref=0.0):
        return cls(c_eff * r_mem, v_rest, r_mem, v_th, v_rest if v_reset is None else v_reset, t_ref)


def lif_rate_closed_form(p: LifParams, i_in: float) -> float:
    """Tonic firing rate with reset to rest; 0 below rheobase."""
    drive = p.r_mem * i_in
    dv = p.v_th - p.v_rest
    if drive <= dv:
        return 0.0
    period = p.t_ref - p.tau_m * math.log1p(-dv / drive)
    return 1.0 / period


def simulate_lif(
    p: LifParams,
    syn: SynParams,
    t_end: float,
    dt: float | None = None,
    *,
    v0: float | None = None,
    current_scale: float = 1.0,
) -> BehavioralTrace:
    """Integrate the LIF model.

    ``dt`` defaults to ``min(tau_m/200, t_end/20000)`` and may never exceed
    ``tau_m/200``.  ``current_scale`` multiplies the input (fault hook).
    """
    limit = p.tau_m / 200.0
    if dt is None:
        dt = min(limit, t_end / 20000.0)
    if dt > limit * (1 + 1e-12):
        raise BehaviorError(f"dt={dt:g} exceeds tau_m/200={limit:g}")
    n, h = _grid(t_end, dt)
    i_of = _syn_fn(syn, current_scale)
    tau, vr, R = p.tau_m, p.v_rest, p.r_mem

    def f(t, v):
        return (-(v - vr) + R * i_of(t)) / tau

    def rk4(t, v, hh):
        k1 = f(t, v)
        k2 = f(t + 0.5 * hh, v + 0.5 * hh * k1)
        k3 = f(t + 0.5 * hh, v + 0.5 * hh * k2)
        k4 = f(t + hh, v + hh * k3)
        return v + hh * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0

    ts = np.linspace(0.0, n * h, n + 1)
    vs = np.empty(n + 1)
    v = p.v_rest if v0 is None else float(v0)
    vs[0] = v
    spikes = []
    release = -math.inf  # end of the current refractory hold
    for k in range(n):
        t0 = ts[k]
        t1 = ts[k + 1]
        t = t0
        while True:
            if release > t:
                if release >= t1:
                    v = p.v_reset
                    break
                t = release
                v = p.v_reset
            v_new = rk4(t, v, t1 - t)
            if v_new >= p.v_th and v < p.v_th:
                ts_ = t + (t1 - t) * (p.v_th - v) / (v_new - v)
                spikes.append(ts_)
                release = ts_ + p.t_ref
                t = ts_
                v = p.v_reset
                if t1 - t <= 0:
                    break
                continue
            v = v_new
            break
        vs[k + 1] = v
    tr = BehavioralTrace(ts, vs, spike_times=np.asarray(spikes))
    tr.derived["i_leak"] = (vs - p.v_rest) / p.r_mem
    return tr


# -- Morris-Lecar ---------------------------------------------------------------


@dataclass(frozen=True)
class MlGating:
    v1: float = -1.2e-3
    v2: float = 18e-3
    v3: float = 2e-3
    v4: float = 30e-3
    phi: float = 40.0


@dataclass(frozen=True)
class MlBurst:
    """Slow outward current ``-alpha * z * (V - e_k)``.

    ``alpha`` multiplies a voltage difference, so it is a conductance (S).
    """

    alpha: float = 0.0
    epsilon: float = 1.0
    z_half: float = 0.0
    z_slope: float = 5e-3


@dataclass(frozen=True)
class MlParams:
    """Morris-Lecar parameters in SI units.

    Defaults are the classic oscillatory set (per unit membrane area of
    1 cm^2): a sustained limit cycle with a period near 0.1 s.
    """

    c: float = 20e-6
    i_ext: float = 90e-6
    g_ca: float = 4.4e-3
    g_k: float = 8e-3
    g_l: float = 2e-3
    e_ca: float = 120e-3
    e_k: float = -84e-3
    e_l: float = -60e-3
    gating: MlGating = MlGating()
    burst: MlBurst = MlBurst()

    def __post_init__(self):
        if not self.c > 0:
            raise BehaviorError("c must be > 0")
        if min(self.g_ca, self.g_k, self.g_l) < 0:
            raise BehaviorError("conductances must be >= 0")
        if not self.e_ca > self.e_l > self.e_k:
            raise BehaviorError("need e_ca > e_l > e_k")

    def with_(self, **changes) -> "MlParams":
        return replace(self, **changes)


def bursting_ml_params() -> MlParams:
    """Documented square-wave bursting set (same units as the defaults).

    A homoclinic-type gating point (high ``v3``/low ``v4``) tonically
    driven, with a slow depolarization-activated outward current that
    silences the cell after a few spikes and recovers during the pause.
    """
    return MlParams(
        c=20e-6,
        i_ext=42e-6,
        g_ca=4.0e-3,
        g_k=8e-3,
        g_l=2e-3,
        gating=MlGating(v1=-1.2e-3, v2=18e-3, v3=12e-3, v4=17.4e-3, phi=230.0),
        burst=MlBurst(alpha=1e-3, epsilon=3.0, z_half=0.0, z_slope=5e-3),
    )


def _ml_rhs(p: MlParams, burst: bool, literal: bool, i_scale: float):
    g = p.gating
    b = p.burst
    c, iext = p.c, p.i_ext * i_scale
    gca, gk, gl, eca, ek, el = p.g_ca, p.g_k, p.g_l, p.e_ca, p.e_k, p.e_l
    v1, v2, v3, v4, phi = g.v1, g.v2, g.v3, g.v4, g.phi
    tanh, cosh, exp = math.tanh, math.cosh, math.exp
    sk = 1.0 if literal else -1.0  # potassium/leak sign

    def rhs(v, w, z):
        m_inf = 0.5 * (1.0 + tanh((v - v1) / v2))
        w_inf = 0.5 * (1.0 + tanh((v - v3) / v4))
        i_ion = -gca * m_inf * (v - eca) + sk * gk * w * (v - ek) + sk * gl * (v - el)
        if burst:
            i_ion -= b.alpha * z * (v - ek)
            x = (v - b.z_half) / b.z_slope
            sig = 1.0 / (1.0 + exp(-x)) if x > -700 else 0.0
            dz = b.epsilon * (sig - z)
        else:
            dz = 0.0
        dv = (iext + i_ion) / c
        dw = phi * cosh((v - v3) / (2.0 * v4)) * (w_inf - w)
        return dv, dw, dz

    return rhs


def ml_w_inf(p: MlParams, v):
    return 0.5 * (1.0 + np.tanh((np.asarray(v) - p.gating.v3) / p.gating.v4))


def simulate_ml(
    p: MlParams,
    t_end: float,
    burst_enabled: bool = False,
    dt: float = 5e-5,
    *,
    v0: float | None = None,
    w0: float | None = None,
    z0: float = 0.0,
    literal_signs: bool = False,
    v_spike: float = 0.0,
    current_scale: float = 1.0,
) -> BehavioralTrace:
    """Integrate Morris-Lecar; spikes are upward crossings of ``v_spike``.

    ``literal_signs=True`` adds the potassium and leak terms instead of
    subtracting them.  That variant does not repolarize and exists only to
    compare against the standard form.
    """
    n, h = _grid(t_end, dt)
    rhs = _ml_rhs(p, burst_enabled, literal_signs, current_scale)
    v = p.e_l if v0 is None else float(v0)
    w = float(ml_w_inf(p, v)) if w0 is None else float(w0)
    z = float(z0)
    V = np.empty(n + 1)
    W = np.empty(n + 1)
    Z = np.empty(n + 1)
    V[0], W[0], Z[0] = v, w, z
    spikes = []
    hh = 0.5 * h
    for k in range(n):
        try:
            a1, b1, c1 = rhs(v, w, z)
            a2, b2, c2 = rhs(v + hh * a1, w + hh * b1, z + hh * c1)
            a3, b3, c3 = rhs(v + hh * a2, w + hh * b2, z + hh * c2)
            a4, b4, c4 = rhs(v + h * a3, w + h * b3, z + h * c3)
        except OverflowError:
            raise BehaviorError(f"Morris-Lecar state diverged at t={k * h:g}") from None
        vn = v + h * (a1 + 2 * a2 + 2 * a3 + a4) / 6.0
        w = w + h * (b1 + 2 * b2 + 2 * b3 + b4) / 6.0
        z = z + h * (c1 + 2 * c2 + 2 * c3 + c4) / 6.0
        if not math.isfinite(vn):
            raise BehaviorError(f"Morris-Lecar state diverged at t={k * h:g}")
        if v < v_spike <= vn:
            spikes.append(k * h + h * (v_spike - v) / (vn - v))
        v = vn
        V[k + 1], W[k + 1], Z[k + 1] = v, w, z
    ts = np.linspace(0.0, n * h, n + 1)
    gating = {"w": W}
    if burst_enabled:
        gating["z"] = Z
    return BehavioralTrace(ts, V, gating=gating, spike_times=np.asarray(spikes))


def ml_period(tr: BehavioralTrace, skip: int = 2) -> float:
    """Mean interval between the spikes after the first ``skip``."""
    st = tr.spike_times[skip:]
    if len(st) < 2:
        return math.inf
    return float(np.mean(np.diff(st)))


# -- Axon-hillock ---------------------------------------------------------------


@dataclass(frozen=True)
class AhParams:
    c: float
    g_l: float
    v_rest: float
    v_th: float
    i_reset: float
    v_floor: float

    def __post_init__(self):
        if not (self.c > 0 and self.g_l > 0 and self.i_reset > 0):
            raise BehaviorError("c, g_l and i_reset must be > 0")
        if not self.v_th > self.v_floor:
            raise BehaviorError("v_th must exceed v_floor")


def ah_period_estimate(p: AhParams, i_syn: float) -> float:
    """Two-phase charge balance, ignoring the leak."""
    dq = p.c * (p.v_th - p.v_floor)
    return dq / i_syn + dq / p.i_reset


def simulate_ah(
    p: AhParams,
    syn: SynParams,
    t_end: float,
    dt: float | None = None,
    *,
    v0: float | None = None,
    current_scale: float = 1.0,
) -> BehavioralTrace:
    """Integrate the axon-hillock model.

    Charging: ``C dV/dt = I_syn - g_l (V - v_rest)``.  After V reaches
    ``v_th`` the cell discharges at ``-i_reset / C`` down to ``v_floor``.
    ``gating["reset"]`` is 1 during discharge.
    """
    if dt is None:
        dt = min(t_end / 20000.0, p.c / p.g_l / 200.0)
    n, h = _grid(t_end, dt)
    i_of = _syn_fn(syn, current_scale)
    C, gl, vr = p.c, p.g_l, p.v_rest
    slope_dn = -p.i_reset / C

    def f(t, v):
        return (i_of(t) - gl * (v - vr)) / C

    def rk4(t, v, hh):
        k1 = f(t, v)
        k2 = f(t + 0.5 * hh, v + 0.5 * hh * k1)
        k3 = f(t + 0.5 * hh, v + 0.5 * hh * k2)
        k4 = f(t + hh, v + hh * k3)
        return v + hh * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0

    ts = np.linspace(0.0, n * h, n + 1)
    vs = np.empty(n + 1)
    rs = np.zeros(n + 1)
    v = p.v_rest if v0 is None else float(v0)
    vs[0] = v
    resetting = False
    spikes = []
    for k in range(n):
        t, t1 = ts[k], ts[k + 1]
        while t < t1:
            if resetting:
                v_new = v + slope_dn * (t1 - t)
                if v_new <= p.v_floor:
                    t = t + (p.v_floor - v) / slope_dn
                    v = p.v_floor
                    resetting = False
                    continue
                v = v_new
                break
            v_new = rk4(t, v, t1 - t)
            if v < p.v_th <= v_new:
                t = t + (t1 - t) * (p.v_th - v) / (v_new - v)
                v = p.v_th
                spikes.append(t)
                resetting = True
                continue
            v = v_new
            break
        vs[k + 1] = v
        rs[k + 1] = 1.0 if resetting else 0.0
    return BehavioralTrace(ts, vs, gating={"reset": rs}, spike_times=np.asarray(spikes))


def spike_count(tr: BehavioralTrace, t0: float = 0.0, t1: float = math.inf) -> int:
    st = tr.spike_times
    return int(np.count_nonzero((st >= t0) & (st <= t1)))


__all__ = [
    "AhParams",
    "BehaviorError",
    "BehavioralTrace",
    "LifParams",
    "MlBurst",
    "MlGating",
    "MlParams",
    "SynParams",
    "ah_period_estimate",
    "bursting_ml_params",
    "lif_rate_closed_form",
    "ml_period",
    "simulate_ah",
    "simulate_lif",
    "simulate_ml",
    "spike_count",
    "syn_current",
]
