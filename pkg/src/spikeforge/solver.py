"""Modified nodal analysis: DC operating point and trapezoidal transient.

The circuit is written as the DAE ``d/dt[C x] + f(x, t) = 0`` where ``x``
holds the non-ground node voltages followed by one branch current per
voltage source, ``C`` is the (constant) capacitance matrix and ``f`` the
sum of resistive, device and source currents leaving each node.

Trapezoidal integration eliminates the capacitor currents::

    i_C(n+1) = (2/h) C (x(n+1) - x(n)) - i_C(n)

and each step is solved by damped Newton iteration on a dense Jacobian.
Step size is governed by a predictor/corrector estimate of the local
truncation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ._kernels import tran_newton
from .devmodel import ekv_core
from .netlist import (
    GROUND,
    Capacitor,
    Circuit,
    CurrentSource,
    Mosfet,
    Resistor,
    VoltageSource,
)

#: maximum change of any node voltage in one Newton iteration (V)
V_STEP_LIMIT = 0.5


class SolverError(RuntimeError):
    """Non-convergence; carries the simulation time and last residual."""

    def __init__(self, message: str, t: float | None = None, residual: float | None = None):
        super().__init__(message)
        self.t = t
        self.residual = residual


@dataclass(frozen=True)
class SolverOptions:
    reltol: float = 1e-4
    abstol_i: float = 1e-12
    abstol_v: float = 1e-6
    gmin: float = 1e-12
    max_newton_iters: int = 1000
    dt_init: float = 1e-12
    dt_min: float = 1e-15
    dt_max: float = 100e-12
    t_end: float = 50e-9
    lte_tol: float = 1e-3
    #: per-timestep Newton cap; min()-ed with max_newton_iters
    tran_newton_iters: int = 50
    fixed_step: bool = False
    #: fault-injection hook: multiplies every transistor current (and its
    #: partials) seen by the simulator; the device model itself is untouched
    current_scale: float = 1.0

    def __post_init__(self):
        for name in ("reltol", "abstol_i", "abstol_v", "gmin", "dt_init", "dt_min",
                     "dt_max", "t_end", "lte_tol"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ValueError(f"SolverOptions.{name} must be positive, got {v!r}")
        if not self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need dt_min <= dt_init <= dt_max")
        if not self.current_scale > 0:
            raise ValueError("current_scale must be positive")
        if self.max_newton_iters < 1 or self.tran_newton_iters < 1:
            raise ValueError("Newton iteration caps must be >= 1")

    def with_(self, **kw) -> "SolverOptions":
        return replace(self, **kw)


# ----------------------------------------------------------------------------
# trace
# ----------------------------------------------------------------------------


@dataclass
class Trace:
    """Waveforms of one transient run.

    ``v`` and ``i`` are per-node and per-element series; element currents
    follow each element's own convention (MOSFET: drain->source, two-terminal
    elements: n_plus->n_minus through the element, voltage sources: branch
    current into n_plus).
    """

    time: np.ndarray
    nodes: tuple[str, ...]
    volts: np.ndarray  # (n_samples, n_nodes)
    element_names: tuple[str, ...]
    currents: np.ndarray  # (n_samples, n_elements)
    p_total: np.ndarray
    p_supply: np.ndarray
    labels: dict = field(default_factory=dict)
    capacitors: tuple = ()  # (name, farads, n_plus, n_minus)
    dc_converged: bool = True
    cold_start: bool = False
    stopped_early: bool = False
    stats: dict = field(default_factory=dict)
    raw: "Trace | None" = None

    def __post_init__(self):
        n = len(self.time)
        if self.volts.shape[0] != n or self.currents.shape[0] != n:
            raise ValueError("trace series length mismatch")
        if n > 1 and not np.all(np.diff(self.time) > 0):
            raise ValueError("trace time must be strictly increasing")

    @property
    def v(self) -> dict[str, np.ndarray]:
        return {name: self.volts[:, k] for k, name in enumerate(self.nodes)}

    @property
    def i(self) -> dict[str, np.ndarray]:
        return {name: self.currents[:, k] for k, name in enumerate(self.element_names)}

    def node(self, name: str) -> np.ndarray:
        if name == GROUND:
            return np.zeros_like(self.time)
        name = self.labels.get(name, name)
        return self.volts[:, self.nodes.index(name)]

    def current(self, element: str) -> np.ndarray:
        return self.currents[:, self.element_names.index(element)]

    def stored_energy(self) -> np.ndarray:
        """Sum of 1/2 C v^2 over all capacitors, per sample."""
        e = np.zeros_like(self.time)
        for _, c, a, b in self.capacitors:
            dv = self.node(a) - self.node(b)
            e += 0.5 * c * dv * dv
        return e

    def window(self, t0: float, t1: float) -> "Trace":
        m = (self.time >= t0) & (self.time <= t1)
        return replace(self, time=self.time[m], volts=self.volts[m], currents=self.currents[m],
                       p_total=self.p_total[m], p_supply=self.p_supply[m])

    def resample(self, dt: float = 0.1e-12) -> "Trace":
        """Linear interpolation onto a uniform grid; original kept in ``raw``."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        base = self.raw if self.raw is not None else self
        t0, t1 = base.time[0], base.time[-1]
        n = int(math.floor((t1 - t0) / dt + 1e-9)) + 1
        t = t0 + dt * np.arange(n)

        def interp(y):
            return np.interp(t, base.time, y)

        volts = np.column_stack([interp(base.volts[:, k]) for k in range(base.volts.shape[1])]) \
            if base.volts.size else np.zeros((n, 0))
        currents = np.column_stack([interp(base.currents[:, k]) for k in range(base.currents.shape[1])]) \
            if base.currents.size else np.zeros((n, 0))
        return replace(base, time=t, volts=volts, currents=currents,
                       p_total=interp(base.p_total), p_supply=interp(base.p_supply), raw=base)

    @property
    def is_uniform(self) -> bool:
        if len(self.time) < 3:
            return True
        d = np.diff(self.time)
        return bool(np.ptp(d) <= 1e-6 * d.mean())

    def to_csv(self, path_or_buf) -> None:
        """Columns: time_s, v_<node>..., p_total_w, p_supply_w."""
        header = ["time_s"] + [f"v_{n}" for n in self.nodes] + ["p_total_w", "p_supply_w"]
        data = np.column_stack([self.time, self.volts, self.p_total, self.p_supply])
        _write_csv(path_or_buf, header, data)


def _write_csv(path_or_buf, header, data):
    lines = [",".join(header)]
    for row in data:
        lines.append(",".join(repr(float(x)) for x in row))
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text)


# ----------------------------------------------------------------------------
# compiled MNA system
# ----------------------------------------------------------------------------


class MnaSystem:
    """Index bookkeeping and vectorized stamping for one circuit."""

    def __init__(self, ckt: Circuit, gmin: float, current_scale: float = 1.0):
        self.ckt = ckt
        self.nodes = ckt.nodes
        self.n_nodes = N = len(ckt.nodes)
        self.vsources = ckt.of_type(VoltageSource)
        self.isources = ckt.of_type(CurrentSource)
        self.mosfets = ckt.of_type(Mosfet)
        self.resistors = ckt.of_type(Resistor)
        self.caps = ckt.of_type(Capacitor)
        self.n_vs = M = len(self.vsources)
        self.size = N + M
        self.gnd = N + M  # ground index in extended vectors
        K = self.size + 1
        idx = {name: k for k, name in enumerate(ckt.nodes)}
        idx[GROUND] = self.gnd
        self.idx = idx

        # linear conductances and voltage-source incidence
        G = np.zeros((K, K))
        for r in self.resistors:
            a, b, g = idx[r.n_plus], idx[r.n_minus], 1.0 / r.ohms
            G[a, a] += g
            G[b, b] += g
            G[a, b] -= g
            G[b, a] -= g
        for k in range(N):
            G[k, k] += gmin
        self.vs_rows = np.arange(N, N + M)
        self.vs_p = np.array([idx[v.n_plus] for v in self.vsources], dtype=int)
        self.vs_n = np.array([idx[v.n_minus] for v in self.vsources], dtype=int)
        self.vs_val = np.array([v.volts for v in self.vsources], dtype=float)
        for k, (p, n) in enumerate(zip(self.vs_p, self.vs_n)):
            G[p, N + k] += 1.0
            G[n, N + k] -= 1.0
            G[N + k, p] += 1.0
            G[N + k, n] -= 1.0
        self.r_p = np.array([idx[r.n_plus] for r in self.resistors], dtype=int)
        self.r_n = np.array([idx[r.n_minus] for r in self.resistors], dtype=int)
        self.r_g = np.array([1.0 / r.ohms for r in self.resistors], dtype=float)
        self.G_lin = G[: self.size, : self.size].copy()
        self.G_lin_ext = G
        self.gmin = gmin

        # capacitance matrix
        C = np.zeros((K, K))
        self.cap_p = np.array([idx[c.n_plus] for c in self.caps], dtype=int)
        self.cap_n = np.array([idx[c.n_minus] for c in self.caps], dtype=int)
        self.cap_c = np.array([c.farads for c in self.caps], dtype=float)
        for a, b, c in zip(self.cap_p, self.cap_n, self.cap_c):
            C[a, a] += c
            C[b, b] += c
            C[a, b] -= c
            C[b, a] -= c
        self.Cm = C[: self.size, : self.size].copy()
        # |C| pattern for residual scaling
        self.Cabs = np.abs(self.Cm)

        # current sources
        self.cs_p = np.array([idx[s.n_plus] for s in self.isources], dtype=int)
        self.cs_n = np.array([idx[s.n_minus] for s in self.isources], dtype=int)

        # mosfet bank
        ms = self.mosfets
        self.m_sign = np.array([m.params.polarity.sign for m in ms])
        self.m_vt0 = np.array([m.params.vt0 for m in ms])
        self.m_n = np.array([m.params.slope_n for m in ms])
        self.m_is = np.array([m.params.i_spec for m in ms]) * current_scale
        self.m_ut = np.array([m.params.u_t for m in ms])
        self.m_d = np.array([idx[m.d] for m in ms], dtype=int)
        self.m_g = np.array([idx[m.g] for m in ms], dtype=int)
        self.m_s = np.array([idx[m.s] for m in ms], dtype=int)
        self.m_b = np.array([idx[m.b] for m in ms], dtype=int)
        rows = np.concatenate([self.m_d] * 4 + [self.m_s] * 4)
        cols = np.concatenate([self.m_g, self.m_d, self.m_s, self.m_b] * 2)
        self._jflat = rows * K + cols
        self._K = K
        # dense incidence maps: KCL stamping and residual scale
        self._inc_m = np.zeros((K, len(ms)))
        self._inc_m[self.m_d, np.arange(len(ms))] += 1.0
        self._inc_m[self.m_s, np.arange(len(ms))] -= 1.0
        ns = len(self.isources)
        self._inc_c = np.zeros((K, ns))
        self._inc_c[self.cs_p, np.arange(ns)] += 1.0
        self._inc_c[self.cs_n, np.arange(ns)] -= 1.0
        groups = [(self.r_p, self.r_n), (self.cs_p, self.cs_n),
                  (self.vs_p, self.vs_n), (self.m_d, self.m_s)]
        n_all = sum(len(a) for a, _ in groups)
        touch = np.zeros((K, n_all))
        off = 0
        for a, b in groups:
            cols_ = off + np.arange(len(a))
            touch[a, cols_] = 1.0
            touch[b, cols_] = 1.0
            off += len(a)
        self._touch = touch
        self._mags = np.zeros(n_all)
        self._mag_off = np.cumsum([0] + [len(a) for a, _ in groups])
        self._xe = np.zeros(K)

        # element order for recorded currents
        self.element_names = tuple(e.name for e in ckt.elements)
        kinds = [type(e).__name__ for e in ckt.elements]
        self._elem_kinds = kinds
        self._pos = {k: np.array([i for i, kk in enumerate(kinds) if kk == k], dtype=int)
                     for k in ("Mosfet", "Capacitor", "Resistor", "CurrentSource", "VoltageSource")}

    def kernel_args(self) -> tuple:
        """Arrays consumed by the compiled transient kernel, in call order."""
        i64 = lambda a: np.ascontiguousarray(a, dtype=np.int64)  # noqa: E731
        f64 = lambda a: np.ascontiguousarray(a, dtype=np.float64)  # noqa: E731
        return (f64(self.G_lin_ext), f64(self.vs_val), self.n_nodes, self.size,
                i64(self.r_p), i64(self.r_n), f64(self.r_g), i64(self.cs_p), i64(self.cs_n),
                i64(self.vs_p), i64(self.vs_n), f64(self.m_sign), f64(self.m_vt0), f64(self.m_n),
                f64(self.m_is), f64(self.m_ut), i64(self.m_d), i64(self.m_g), i64(self.m_s),
                i64(self.m_b))

    # -- evaluation -------------------------------------------------------

    def ext(self, x: np.ndarray) -> np.ndarray:
        xe = np.empty(self.size + 1)
        xe[: self.size] = x
        xe[self.size] = 0.0
        return xe

    def source_values(self, t: float | None) -> np.ndarray:
        """Current-source values; ``t=None`` selects the DC values."""
        if t is None:
            return np.array([s.dc() for s in self.isources], dtype=float)
        return np.array([s.at(t) for s in self.isources], dtype=float)

    def mos_eval(self, xe: np.ndarray):
        return ekv_core(self.m_sign, self.m_vt0, self.m_n, self.m_is, self.m_ut,
                        xe[self.m_g], xe[self.m_s], xe[self.m_d], xe[self.m_b])

    def static(self, x: np.ndarray, isrc: np.ndarray, extra_gmin: float = 0.0):
        """Static residual ``f``, its Jacobian and per-row current scale.

        Returns ``(f, J, scale, mos_i)``.
        """
        K = self._K
        n = self.size
        xe = self._xe
        xe[:n] = x
        fe = self.G_lin_ext @ xe
        fe[self.vs_rows] -= self.vs_val
        mags = self._mags
        o = self._mag_off
        mags[o[0]:o[1]] = np.abs(self.r_g * (xe[self.r_p] - xe[self.r_n]))
        mags[o[1]:o[2]] = np.abs(isrc)
        mags[o[2]:o[3]] = np.abs(x[self.n_nodes:])
        if len(self.mosfets):
            i_ds, gm, gds, gms = self.mos_eval(xe)
            gmb = -(gm + gds + gms)
            fe += self._inc_m @ i_ds
            vals = np.concatenate([gm, gds, gms, gmb, -gm, -gds, -gms, -gmb])
            J = np.bincount(self._jflat, weights=vals, minlength=K * K).reshape(K, K)
            J += self.G_lin_ext
            mags[o[3]:] = np.abs(i_ds)
        else:
            i_ds = np.zeros(0)
            J = self.G_lin_ext.copy()
        if len(self.isources):
            fe += self._inc_c @ isrc
        # per-row scale: largest current magnitude of any incident element
        scale = (self._touch * mags).max(axis=1, initial=0.0)
        f = fe[:n]
        Jr = J[:n, :n]
        if extra_gmin:
            N = self.n_nodes
            f = f.copy()
            f[:N] += extra_gmin * x[:N]
            Jr = Jr.copy()
            Jr[np.arange(N), np.arange(N)] += extra_gmin
        return f, Jr, scale[:n], i_ds

    # -- recorded quantities ---------------------------------------------------

    def element_currents(self, x, isrc, mos_i, icap):
        xe = self.ext(x)
        out = np.empty(len(self.element_names))
        out[self._pos["Mosfet"]] = mos_i
        out[self._pos["Capacitor"]] = icap
        out[self._pos["Resistor"]] = self.r_g * (xe[self.r_p] - xe[self.r_n])
        out[self._pos["CurrentSource"]] = isrc
        out[self._pos["VoltageSource"]] = x[self.n_nodes:]
        return out

    def powers(self, x, isrc, mos_i):
        """(p_total, p_supply): dissipated and source-delivered power."""
        xe = self.ext(x)
        N = self.n_nodes
        p = 0.0
        if len(self.mosfets):
            p += float(np.dot(mos_i, xe[self.m_d] - xe[self.m_s]))
        if len(self.resistors):
            dv = xe[self.r_p] - xe[self.r_n]
            p += float(np.dot(self.r_g * dv, dv))
        p += self.gmin * float(np.dot(x[:N], x[:N]))
        ps = -float(np.dot(self.vs_val, x[N:]))
        if len(self.isources):
            ps += float(np.dot(xe[self.cs_n] - xe[self.cs_p], isrc))
        return p, ps

    def cap_currents_from_rates(self, xdot):
        xe = self.ext(xdot)
        return self.cap_c * (xe[self.cap_p] - xe[self.cap_n])


# ----------------------------------------------------------------------------
# DC operating point
# ----------------------------------------------------------------------------


def _newton(system: MnaSystem, x0, residual_fn, opt: SolverOptions, maxit: int):
    """Damped Newton.  ``residual_fn(x) -> (R, J, scale, extras)``.

    Converged when the residual of every KCL row is within
    ``abstol_i + reltol*scale`` and the preceding update was within the
    voltage tolerance.  Returns ``(x, ok, iters, extras, resid_ratio)``.
    """
    N = system.n_nodes
    x = x0.copy()
    dx_ok = False
    ratio = math.inf
    for it in range(maxit + 1):
        R, J, scale, extras = residual_fn(x)
        if not np.isfinite(R).all():
            return x, False, it, extras, math.inf
        tol_i = opt.abstol_i + opt.reltol * scale[:N]
        kcl = np.abs(R[:N]) / tol_i
        vs_ratio = np.abs(R[N:]) / opt.abstol_v if system.n_vs else np.zeros(0)
        ratio = float(max(kcl.max(initial=0.0), vs_ratio.max(initial=0.0)))
        if dx_ok and ratio <= 1.0:
            return x, True, it, extras, ratio
        if it == maxit:
            break
        try:
            dx = np.linalg.solve(J, -R)
        except np.linalg.LinAlgError:
            return x, False, it, extras, ratio
        if not np.isfinite(dx).all():
            return x, False, it, extras, ratio
        dv = dx[:N]
        np.clip(dv, -V_STEP_LIMIT, V_STEP_LIMIT, out=dv)
        x = x + dx
        dx_ok = bool((np.abs(dv) <= opt.abstol_v + opt.reltol * np.abs(x[:N])).all())
    return x, False, maxit, extras, ratio


def dc_operating_point(ckt: Circuit, opt: SolverOptions | None = None,
                       x0: np.ndarray | None = None, *, full: bool = False):
    """DC solution: node voltages (and branch currents if ``full``).

    Plain Newton first; on failure a GMIN ladder ``gmin*10^k`` for k = 6..0
    with each rung seeding the next, then a final solve at the base gmin.
    """
    opt = opt or SolverOptions()
    system = MnaSystem(ckt, opt.gmin, opt.current_scale)
    x = _dc_solve(system, opt, x0)
    return x if full else x[: system.n_nodes]


def _dc_solve(system: MnaSystem, opt: SolverOptions, x0=None):
    isrc = system.source_values(None)
    start = np.zeros(system.size) if x0 is None else np.asarray(x0, float).copy()

    def fn(extra):
        def r(x):
            f, J, scale, _ = system.static(x, isrc, extra)
            return f, J, scale, None
        return r

    x, ok, _, _, ratio = _newton(system, start, fn(0.0), opt, opt.max_newton_iters)
    if ok:
        return x
    x = start
    for k in range(6, -1, -1):
        g = opt.gmin * 10.0 ** k
        x, ok, _, _, ratio = _newton(system, x, fn(g - opt.gmin if k else 0.0), opt,
                                     opt.max_newton_iters)
        if not ok:
            break
    if ok:
        return x
    raise SolverError("DC operating point did not converge after GMIN stepping",
                      t=None, residual=ratio)


# ----------------------------------------------------------------------------
# transient
# ----------------------------------------------------------------------------


def _consistent_rates(system: MnaSystem, x: np.ndarray, isrc: np.ndarray):
    """Node-voltage rates and branch currents consistent with ``x`` at t0+.

    Solves the saddle-point system  C_nn xdot + B i_vs = -f_nodes,
    B^T xdot = 0  (sources are constant in time).
    """
    N, M = system.n_nodes, system.n_vs
    x = x.copy()
    x[N:] = 0.0
    f, _, _, _ = system.static(x, isrc)
    A = np.zeros((N + M, N + M))
    A[:N, :N] = system.Cm[:N, :N]
    A[:N, N:] = system.G_lin[:N, N:]
    A[N:, :N] = system.G_lin[N:, :N]
    rhs = np.concatenate([-f[:N], np.zeros(M)])
    sol = np.linalg.lstsq(A, rhs, rcond=None)[0] if np.linalg.matrix_rank(A) < N + M \
        else np.linalg.solve(A, rhs)
    xdot = np.zeros(system.size)
    xdot[:N] = sol[:N]
    x[N:] = sol[N:]
    return xdot, x


def _lagrange3(ts, xs, t):
    (t0, t1, t2), (x0, x1, x2) = ts, xs
    l0 = (t - t1) * (t - t2) / ((t0 - t1) * (t0 - t2))
    l1 = (t - t0) * (t - t2) / ((t1 - t0) * (t1 - t2))
    l2 = (t - t0) * (t - t1) / ((t2 - t0) * (t2 - t1))
    return l0 * x0 + l1 * x1 + l2 * x2


def transient(
    ckt: Circuit,
    opt: SolverOptions | None = None,
    *,
    initial: dict[str, float] | None = None,
    stop: Callable[[float, np.ndarray], bool] | None = None,
) -> Trace:
    """Trapezoidal transient from the DC point (or from ``initial`` node voltages).

    ``stop(t, v)`` is called after every accepted step with the node-voltage
    vector (ordered as ``ckt.nodes``); returning True ends the run early.
    """
    opt = opt or SolverOptions()
    system = MnaSystem(ckt, opt.gmin, opt.current_scale)
    N = system.n_nodes
    dc_ok, cold = True, False
    if initial is None:
        try:
            x = _dc_solve(system, opt)
        except SolverError:
            dc_ok, cold = False, True
            x = np.zeros(system.size)
    else:
        x = np.zeros(system.size)
        for name, v in initial.items():
            x[system.idx[ckt.labels.get(name, name)]] = v
        # voltage-source nodes are pinned regardless of the requested state
        for p, n, val in zip(system.vs_p, system.vs_n, system.vs_val):
            if n == system.gnd and p < N:
                x[p] = val

    t = 0.0
    isrc = system.source_values(0.0)
    xdot, x = _consistent_rates(system, x, isrc)
    icap = system.cap_currents_from_rates(xdot)
    Cm = system.Cm
    inc = np.zeros((system.size, len(system.caps)))
    for k, (a, b) in enumerate(zip(system.cap_p, system.cap_n)):
        if a < system.size:
            inc[a, k] += 1.0
        if b < system.size:
            inc[b, k] -= 1.0

    maxit = min(opt.max_newton_iters, opt.tran_newton_iters)
    f0, _, _, mos_i = system.static(x, isrc)

    times = [t]
    states = [x.copy()]
    currents = [system.element_currents(x, isrc, mos_i, icap)]
    p0 = system.powers(x, isrc, mos_i)
    ptot, psup = [p0[0]], [p0[1]]

    h = opt.dt_init
    stats = dict(accepted=0, rejected_newton=0, rejected_lte=0, newton_iters=0,
                 lte_floor=0, max_kcl_ratio=0.0)
    hist_t, hist_x = [t], [x[:N].copy()]
    stopped = False
    t_end = opt.t_end
    cap_c, cap_p, cap_n = system.cap_c, system.cap_p, system.cap_n
    kargs = system.kernel_args()
    Cm = np.ascontiguousarray(Cm)

    while t < t_end * (1 - 1e-12):
        h = min(h, t_end - t)
        if opt.fixed_step:
            h = min(opt.dt_init, t_end - t)
        t_new = t + h
        isrc_new = system.source_values(t_new)
        a = 2.0 / h
        icn_nodes = inc @ icap
        xn = x

        if len(hist_t) >= 3:
            guess = x.copy()
            guess[:N] = _lagrange3(hist_t[-3:], hist_x[-3:], t_new)
        else:
            guess = x.copy()
        x_new, ok, iters, mi, ratio = tran_newton(guess, xn, icn_nodes, a, Cm, isrc_new, *kargs,
                                                  opt.abstol_i, opt.abstol_v, opt.reltol,
                                                  V_STEP_LIMIT, maxit)
        stats["newton_iters"] += iters
        if not ok:
            stats["rejected_newton"] += 1
            if opt.fixed_step:
                raise SolverError(f"Newton failed at fixed step, t={t_new:.6e} s", t=t_new,
                                  residual=ratio)
            h *= 0.5
            if h < opt.dt_min:
                raise SolverError(f"timestep underflow at t={t:.6e} s", t=t, residual=ratio)
            continue

        grow = False
        if not opt.fixed_step and len(hist_t) >= 3:
            xp = _lagrange3(hist_t[-3:], hist_x[-3:], t_new)
            h1 = hist_t[-1] - hist_t[-2]
            h2 = hist_t[-2] - hist_t[-3]
            prod = h * (h + h1) * (h + h1 + h2) / 6.0
            tr = h ** 3 / 12.0
            lte = np.abs(x_new[:N] - xp) * (tr / (prod + tr))
            tol = opt.lte_tol * (opt.abstol_v + opt.reltol * np.abs(x_new[:N]))
            r = float((lte / tol).max(initial=0.0))
            if r > 1.0:
                if h > opt.dt_min * (1 + 1e-9):
                    stats["rejected_lte"] += 1
                    h = max(0.5 * h, opt.dt_min)
                    continue
                stats["lte_floor"] += 1
            grow = r < 0.25

        # accept
        dvc_new = system.ext(x_new)
        dvc_old = system.ext(x)
        icap = a * cap_c * ((dvc_new[cap_p] - dvc_new[cap_n]) - (dvc_old[cap_p] - dvc_old[cap_n])) \
            - icap
        x = x_new
        t = t_new
        stats["accepted"] += 1
        stats["max_kcl_ratio"] = max(stats["max_kcl_ratio"], ratio)
        times.append(t)
        states.append(x.copy())
        currents.append(system.element_currents(x, isrc_new, mi, icap))
        pt, ps = system.powers(x, isrc_new, mi)
        ptot.append(pt)
        psup.append(ps)
        hist_t.append(t)
        hist_x.append(x[:N].copy())
        if len(hist_t) > 3:
            del hist_t[0], hist_x[0]
        if grow:
            h = min(1.5 * h, opt.dt_max)
        if stop is not None and stop(t, x[:N]):
            stopped = True
            break

    S = np.array(states)
    caps = tuple((c.name, c.farads, c.n_plus, c.n_minus) for c in system.caps)
    return Trace(
        time=np.array(times),
        nodes=tuple(ckt.nodes),
        volts=S[:, :N],
        element_names=system.element_names,
        currents=np.array(currents),
        p_total=np.array(ptot),
        p_supply=np.array(psup),
        labels=dict(ckt.labels),
        capacitors=caps,
        dc_converged=dc_ok,
        cold_start=cold,
        stopped_early=stopped,
        stats=stats,
    )
