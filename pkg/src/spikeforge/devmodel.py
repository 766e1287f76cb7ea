"""Smooth EKV-style compact MOSFET model.

A single-expression, source/drain symmetric drain-current law that is valid
from deep subthreshold through strong inversion and is C1-continuous in every
terminal voltage, which is what the Newton iterations in :mod:`spikeforge.solver`
rely on.

Forward/reverse normalized currents use ``F(x) = ln^2(1 + exp(x/2))``::

    U_T = k*T/q
    v_p = (v_gb - vt0) / n
    I   = i_spec * [F((v_p - v_sb)/U_T) - F((v_p - v_db)/U_T)]

PMOS devices are evaluated with all voltages negated and the current sign
flipped.  The body terminal only enters through the gate/source/drain-to-body
differences; there is no body-effect coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

BOLTZMANN = 1.380649e-23
Q_ELECTRON = 1.602176634e-19

#: terminal voltages outside this window are rejected by the scalar API
V_SANITY = 2.0


class ModelEvaluationError(ValueError):
    """Raised when the device law is evaluated at non-finite or absurd voltages."""

    def __init__(self, message: str, terminals: dict | None = None):
        super().__init__(message)
        self.terminals = terminals or {}


class Polarity(str, Enum):
    N = "N"
    P = "P"

    @property
    def sign(self) -> float:
        return 1.0 if self is Polarity.N else -1.0


def thermal_voltage(temp: float) -> float:
    return BOLTZMANN * temp / Q_ELECTRON


@dataclass(frozen=True)
class DeviceParams:
    """Compact-model parameters for one transistor polarity.

    Parameters
    ----------
    polarity : Polarity
        ``N`` or ``P``.
    vt0 : float
        Threshold voltage magnitude (V).
    slope_n : float
        Subthreshold slope factor, within [1, 2].
    i_spec : float
        Specific current (A) scaling the whole I-V law.
    temp : float
        Temperature (K); sets the thermal voltage.
    """

    polarity: Polarity
    vt0: float
    slope_n: float
    i_spec: float
    temp: float = 300.0

    def __post_init__(self):
        object.__setattr__(self, "polarity", Polarity(self.polarity))
        if not 1.0 <= self.slope_n <= 2.0:
            raise ValueError(f"slope_n must lie in [1, 2], got {self.slope_n}")
        if not self.i_spec > 0:
            raise ValueError(f"i_spec must be positive, got {self.i_spec}")
        if not self.vt0 > 0:
            raise ValueError(f"vt0 must be positive, got {self.vt0}")
        if not self.temp > 0:
            raise ValueError(f"temp must be positive, got {self.temp}")

    @property
    def u_t(self) -> float:
        return thermal_voltage(self.temp)

    @property
    def swing(self) -> float:
        """Ideal subthreshold swing in V/decade."""
        return self.slope_n * self.u_t * math.log(10.0)

    def to_dict(self) -> dict:
        return {
            "polarity": self.polarity.value,
            "vt0": self.vt0,
            "slope_n": self.slope_n,
            "i_spec": self.i_spec,
            "temp": self.temp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceParams":
        return cls(
            polarity=Polarity(d["polarity"]),
            vt0=float(d["vt0"]),
            slope_n=float(d["slope_n"]),
            i_spec=float(d["i_spec"]),
            temp=float(d.get("temp", 300.0)),
        )


# -- core law ---------------------------------------------------------------


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    # exp(z - softplus(z)) keeps relative precision far into the negative tail
    return np.exp(z - _softplus(z))


def ekv_f(x):
    """Interpolation function ``ln^2(1 + e^(x/2))``; overflow-safe."""
    return _softplus(0.5 * np.asarray(x, dtype=float)) ** 2


def ekv_df(x):
    """Derivative of :func:`ekv_f`."""
    h = 0.5 * np.asarray(x, dtype=float)
    return _softplus(h) * _sigmoid(h)


def _f_df(x):
    """``(ekv_f(x), ekv_df(x))`` sharing one softplus evaluation."""
    h = 0.5 * x
    sp = np.logaddexp(0.0, h)
    return sp * sp, sp * np.exp(h - sp)


def ekv_core(sign, vt0, slope_n, i_spec, u_t, v_g, v_s, v_d, v_b):
    """Vectorized drain current and partials.

    All arguments broadcast.  Returns ``(i_ds, gm, gds, gms)`` where ``i_ds``
    is the conventional current flowing drain->source and the conductances
    are its partials w.r.t. gate, drain and source voltage.  The bulk partial
    is ``-(gm + gds + gms)``.
    """
    v_p = (sign * (v_g - v_b) - vt0) / slope_n
    f_f, df_f = _f_df((v_p - sign * (v_s - v_b)) / u_t)
    f_r, df_r = _f_df((v_p - sign * (v_d - v_b)) / u_t)
    k = i_spec / u_t
    i_ds = sign * i_spec * (f_f - f_r)
    gm = k * (df_f - df_r) / slope_n
    gds = k * df_r
    gms = -k * df_f
    return i_ds, gm, gds, gms


def _check_terminals(v_g, v_s, v_d, v_b):
    terms = {"v_g": v_g, "v_s": v_s, "v_d": v_d, "v_b": v_b}
    for name, v in terms.items():
        if not math.isfinite(v):
            raise ModelEvaluationError(f"non-finite terminal voltage {name}={v}", terms)
        if abs(v) > V_SANITY:
            raise ModelEvaluationError(
                f"terminal voltage {name}={v} V outside +/-{V_SANITY} V", terms
            )


def drain_current(p: DeviceParams, v_g: float, v_s: float, v_d: float, v_b: float = 0.0) -> float:
    """Signed drain->source current (A) of one device."""
    _check_terminals(v_g, v_s, v_d, v_b)
    i, _, _, _ = ekv_core(p.polarity.sign, p.vt0, p.slope_n, p.i_spec, p.u_t, v_g, v_s, v_d, v_b)
    return float(i)


def drain_current_derivs(
    p: DeviceParams, v_g: float, v_s: float, v_d: float, v_b: float = 0.0
) -> tuple[float, float, float]:
    """Analytic ``(gm, gds, gms)``: partials w.r.t. gate, drain and source (S)."""
    _check_terminals(v_g, v_s, v_d, v_b)
    _, gm, gds, gms = ekv_core(
        p.polarity.sign, p.vt0, p.slope_n, p.i_spec, p.u_t, v_g, v_s, v_d, v_b
    )
    return float(gm), float(gds), float(gms)


# -- presets ------------------------------------------------------------------


def calibrate_i_spec(p: DeviceParams, v_on: float, i_target: float) -> float:
    """i_spec that makes ``|I_D(V_GS = V_DS = v_on)| == i_target``.

    The law is linear in i_spec, so this is a single division.
    """
    s = p.polarity.sign
    unit = replace(p, i_spec=1.0)
    i_unit = abs(drain_current(unit, v_g=s * v_on, v_s=0.0, v_d=s * v_on, v_b=0.0))
    return i_target / i_unit


@dataclass(frozen=True)
class DevicePreset:
    """Matched NMOS/PMOS pair plus the per-node parasitic capacitance."""

    name: str
    nmos: DeviceParams
    pmos: DeviceParams
    c_par: float = 0.01e-15

    def __post_init__(self):
        if self.nmos.polarity is not Polarity.N or self.pmos.polarity is not Polarity.P:
            raise ValueError("preset needs an N and a P device")
        if not self.c_par > 0:
            raise ValueError("c_par must be positive")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "nmos": self.nmos.to_dict(),
            "pmos": self.pmos.to_dict(),
            "c_par": self.c_par,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DevicePreset":
        return cls(
            name=str(d.get("name", "custom")),
            nmos=DeviceParams.from_dict(d["nmos"]),
            pmos=DeviceParams.from_dict(d["pmos"]),
            c_par=float(d.get("c_par", 0.01e-15)),
        )


FINFET7_VT0 = 0.15
FINFET7_SLOPE = 1.1
FINFET7_ION = 40e-6  # at |V_GS| = |V_DS| = 0.7 V
PMOS_DRIVE_RATIO = 1.2


def make_finfet7_preset(temp: float = 300.0, vt0: float = FINFET7_VT0) -> DevicePreset:
    """Loose 7 nm-class calibration (single fin; not taken from any PDK)."""
    n_seed = DeviceParams(Polarity.N, vt0, FINFET7_SLOPE, 1.0, temp)
    nmos = replace(n_seed, i_spec=calibrate_i_spec(n_seed, 0.70, FINFET7_ION))
    pmos = DeviceParams(Polarity.P, vt0, FINFET7_SLOPE, nmos.i_spec * PMOS_DRIVE_RATIO, temp)
    return DevicePreset("finfet7-like", nmos, pmos)


PRESETS: dict[str, DevicePreset] = {"finfet7-like": make_finfet7_preset()}


def get_preset(name: str) -> DevicePreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown device preset {name!r}; known: {sorted(PRESETS)}") from None
