"""Circuit data model and constructors for the three neuron cells.

Node ``"0"`` is ground and is never listed in :attr:`Circuit.nodes`.  Every
builder attaches a parasitic capacitor of ``preset.c_par`` from each
non-ground node to ground; these carry ``parasitic=True`` and are excluded
from the explicit-capacitor counts.

Text dump format (:meth:`Circuit.dump`), one element per line::

    <name> <type> <terminal>=<node> ... value=<number>[<unit>]

Terminals are listed in the element's declaration order (MOSFET: d g s b).
Lines starting with ``#`` are comments.  This is a debugging aid, not a
SPICE dialect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Callable, Mapping, Union

from .devmodel import DeviceParams, DevicePreset, PRESETS

GROUND = "0"

Waveform = Union[float, Callable[[float], float]]


class ConstructionError(ValueError):
    pass


class NeuronKind(str, Enum):
    LIF = "LIF"
    ML = "ML"
    AH = "AH"

    @classmethod
    def parse(cls, s) -> "NeuronKind":
        if isinstance(s, cls):
            return s
        try:
            return cls(str(s).upper())
        except ValueError:
            raise ValueError(f"unknown neuron kind {s!r}") from None


# -- elements -------------------------------------------------------------


@dataclass(frozen=True)
class Mosfet:
    name: str
    params: DeviceParams
    d: str
    g: str
    s: str
    b: str

    @property
    def terminals(self):
        return (self.d, self.g, self.s, self.b)


@dataclass(frozen=True)
class Capacitor:
    name: str
    farads: float
    n_plus: str
    n_minus: str
    parasitic: bool = False

    @property
    def terminals(self):
        return (self.n_plus, self.n_minus)


@dataclass(frozen=True)
class Resistor:
    name: str
    ohms: float
    n_plus: str
    n_minus: str

    @property
    def terminals(self):
        return (self.n_plus, self.n_minus)


@dataclass(frozen=True)
class CurrentSource:
    """Current ``value`` flows from ``n_plus`` through the source into ``n_minus``.

    ``dc_value`` is what the source carries during the DC operating point;
    ``None`` means the same as ``value``.  A source with ``dc_value=0`` and
    a nonzero ``value`` models an input switched on at t = 0+.
    """

    name: str
    value: Waveform
    n_plus: str
    n_minus: str
    dc_value: float | None = None

    @property
    def terminals(self):
        return (self.n_plus, self.n_minus)

    def at(self, t: float) -> float:
        v = self.value
        return float(v(t)) if callable(v) else float(v)

    def dc(self) -> float:
        if self.dc_value is not None:
            return float(self.dc_value)
        return self.at(0.0)


@dataclass(frozen=True)
class VoltageSource:
    name: str
    volts: float
    n_plus: str
    n_minus: str

    @property
    def terminals(self):
        return (self.n_plus, self.n_minus)


Element = Union[Mosfet, Capacitor, Resistor, CurrentSource, VoltageSource]


# -- circuit ------------------------------------------------------------------


@dataclass(frozen=True)
class Circuit:
    nodes: tuple[str, ...]
    elements: tuple[Element, ...]
    labels: Mapping[str, str] = field(default_factory=dict)
    name: str = "circuit"

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "labels", MappingProxyType(dict(self.labels)))
        self.validate()

    def validate(self) -> None:
        if GROUND in self.nodes:
            raise ConstructionError("ground is implicit and must not be listed")
        if len(set(self.nodes)) != len(self.nodes):
            raise ConstructionError("duplicate node names")
        known = set(self.nodes) | {GROUND}
        names = set()
        for e in self.elements:
            if e.name in names:
                raise ConstructionError(f"duplicate element name {e.name}")
            names.add(e.name)
            for t in e.terminals:
                if t not in known:
                    raise ConstructionError(f"{e.name} references unknown node {t!r}")
            if isinstance(e, Capacitor) and not e.farads > 0:
                raise ConstructionError(f"{e.name}: capacitance must be > 0")
            if isinstance(e, Resistor) and not e.ohms > 0:
                raise ConstructionError(f"{e.name}: resistance must be > 0")
        for role, node in self.labels.items():
            if node not in known:
                raise ConstructionError(f"label {role} -> unknown node {node!r}")
        # connectivity to ground through element terminals
        adj = {n: set() for n in known}
        for e in self.elements:
            ts = e.terminals
            for a in ts:
                adj[a].update(ts)
        seen, stack = {GROUND}, [GROUND]
        while stack:
            for m in adj[stack.pop()]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        lost = known - seen
        if lost:
            raise ConstructionError(f"nodes not connected to ground: {sorted(lost)}")

    def __reduce__(self):
        return (Circuit, (self.nodes, self.elements, dict(self.labels), self.name))

    # convenience views
    def of_type(self, cls) -> list:
        return [e for e in self.elements if isinstance(e, cls)]

    @property
    def mosfets(self) -> list[Mosfet]:
        return self.of_type(Mosfet)

    @property
    def capacitors(self) -> list[Capacitor]:
        return [c for c in self.of_type(Capacitor) if not c.parasitic]

    def element(self, name: str) -> Element:
        for e in self.elements:
            if e.name == name:
                return e
        raise KeyError(name)

    def dump(self) -> str:
        lines = [f"# {self.name}: {len(self.nodes)} nodes, {len(self.elements)} elements"]
        for role, node in self.labels.items():
            lines.append(f"# label {role}={node}")
        for e in self.elements:
            if isinstance(e, Mosfet):
                p = e.params
                lines.append(
                    f"{e.name} mosfet d={e.d} g={e.g} s={e.s} b={e.b} "
                    f"value={p.polarity.value}(vt0={p.vt0:g},n={p.slope_n:g},i_spec={p.i_spec:g})"
                )
            elif isinstance(e, Capacitor):
                kind = "capacitor_par" if e.parasitic else "capacitor"
                lines.append(f"{e.name} {kind} p={e.n_plus} n={e.n_minus} value={e.farads:g}F")
            elif isinstance(e, Resistor):
                lines.append(f"{e.name} resistor p={e.n_plus} n={e.n_minus} value={e.ohms:g}Ohm")
            elif isinstance(e, CurrentSource):
                val = "callable" if callable(e.value) else f"{e.value:g}A"
                lines.append(f"{e.name} isource p={e.n_plus} n={e.n_minus} value={val}")
            elif isinstance(e, VoltageSource):
                lines.append(f"{e.name} vsource p={e.n_plus} n={e.n_minus} value={e.volts:g}V")
        return "\n".join(lines) + "\n"


# -- neuron configuration ---------------------------------------------------------

C_MIN, C_MAX = 0.01e-15, 100e-15

#: default bias voltages as fractions of V_supp
DEFAULT_BIAS_FRACTIONS = {
    NeuronKind.LIF: {"v_leak": 0.15},
    NeuronKind.ML: {"v_kslow": 0.8},
    NeuronKind.AH: {},
}


@dataclass(frozen=True)
class NeuronConfig:
    """One point of the design space.

    ``v_supp == 0`` is accepted as a powered-down cell; otherwise the supply
    must lie in [0.05, 1.0] V.  For AH cells ``c_mem`` is ignored and stored
    as ``None``.
    """

    kind: NeuronKind
    v_supp: float
    c_mem: float | None
    c_res: float
    i_syn: float = 100e-9
    bias: Mapping[str, float] = field(default_factory=dict)
    preset: DevicePreset = field(default_factory=lambda: PRESETS["finfet7-like"])

    def __post_init__(self):
        kind = NeuronKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "bias", MappingProxyType(dict(self.bias)))
        if kind is NeuronKind.AH:
            object.__setattr__(self, "c_mem", None)
        if not (self.v_supp == 0.0 or 0.05 <= self.v_supp <= 1.0):
            raise ConstructionError(f"v_supp={self.v_supp} outside [0.05, 1.0] V")
        caps = [("c_res", self.c_res)]
        if kind is not NeuronKind.AH:
            if self.c_mem is None:
                raise ConstructionError(f"{kind.value} needs c_mem")
            caps.append(("c_mem", self.c_mem))
        for name, c in caps:
            if not C_MIN * (1 - 1e-9) <= c <= C_MAX * (1 + 1e-9):
                raise ConstructionError(f"{name}={c} F outside [0.01 fF, 100 fF]")
        if not self.i_syn >= 0:
            raise ConstructionError("i_syn must be >= 0")
        allowed = set(DEFAULT_BIAS_FRACTIONS[kind])
        unknown = set(self.bias) - allowed
        if unknown:
            raise ConstructionError(f"unknown bias override(s) for {kind.value}: {sorted(unknown)}")

    def __reduce__(self):
        # the read-only bias view does not pickle; rebuild from a plain dict
        return (NeuronConfig, (self.kind, self.v_supp, self.c_mem, self.c_res, self.i_syn, dict(self.bias),
                               self.preset))

    def bias_voltage(self, name: str) -> float:
        if name in self.bias:
            return float(self.bias[name])
        return DEFAULT_BIAS_FRACTIONS[self.kind][name] * self.v_supp

    def with_(self, **changes) -> "NeuronConfig":
        from dataclasses import replace

        return replace(self, **changes)


def _finish(name, nodes, elements, labels, preset: DevicePreset) -> Circuit:
    pars = [Capacitor(f"CP_{n}", preset.c_par, n, GROUND, parasitic=True) for n in nodes]
    return Circuit(nodes=tuple(nodes), elements=tuple(elements) + tuple(pars), labels=labels, name=name)


def _inverter(prefix_p, prefix_n, inp, out, preset, vdd="vdd"):
    return [
        Mosfet(prefix_p, preset.pmos, d=out, g=inp, s=vdd, b=vdd),
        Mosfet(prefix_n, preset.nmos, d=out, g=inp, s=GROUND, b=GROUND),
    ]


def _supply(cfg):
    return VoltageSource("VSUPP", cfg.v_supp, "vdd", GROUND)


def _check_kind(cfg, kind):
    if not isinstance(cfg, NeuronConfig):
        raise ConstructionError("expected a NeuronConfig")
    if cfg.kind is not kind:
        raise ConstructionError(f"config kind {cfg.kind.value} != {kind.value}")


def build_lif(cfg: NeuronConfig) -> Circuit:
    """Leaky integrate-and-fire cell, 8 transistors, 2 capacitors.

    ======= ====== ===============================================
    node    label  connections
    ======= ====== ===============================================
    n_in    syn    M1 diode PMOS, I_syn sink to ground
    n_mem   mem    M2 mirror output, C_mem, M7 reset, M8 leak
    n_a            inverter M3/M4 output
    n_spike out    inverter M5/M6 output, C_res to n_mem
    n_leak         bias source ``v_leak`` on M8's gate
    ======= ====== ===============================================

    C_res couples the output back onto the membrane, so a threshold
    crossing is regenerative: the rising output kicks n_mem up, M7 drains
    it, and the falling output snaps it back below the rest level.
    """
    _check_kind(cfg, NeuronKind.LIF)
    p = cfg.preset
    nodes = ["vdd", "n_in", "n_mem", "n_a", "n_spike", "n_leak"]
    els = [
        _supply(cfg),
        VoltageSource("VLEAK", cfg.bias_voltage("v_leak"), "n_leak", GROUND),
        CurrentSource("ISYN", cfg.i_syn, "n_in", GROUND, dc_value=0.0),
        Mosfet("M1", p.pmos, d="n_in", g="n_in", s="vdd", b="vdd"),
        Mosfet("M2", p.pmos, d="n_mem", g="n_in", s="vdd", b="vdd"),
        *_inverter("M3", "M4", "n_mem", "n_a", p),
        *_inverter("M5", "M6", "n_a", "n_spike", p),
        Mosfet("M7", p.nmos, d="n_mem", g="n_spike", s=GROUND, b=GROUND),
        Mosfet("M8", p.nmos, d="n_mem", g="n_leak", s=GROUND, b=GROUND),
        Capacitor("CMEM", cfg.c_mem, "n_mem", GROUND),
        Capacitor("CRES", cfg.c_res, "n_spike", "n_mem"),
    ]
    labels = {"membrane": "n_mem", "spike_out": "n_spike", "synapse_in": "n_in"}
    return _finish("LIF", nodes, els, labels, p)


def build_ml(cfg: NeuronConfig) -> Circuit:
    """Morris-Lecar-style cell, 6 transistors, 2 capacitors.

    ======= ====== ===============================================
    node    label  connections
    ======= ====== ===============================================
    n_mem   mem    I_syn injected directly, C_mem, M5 drain
    n_a            inverter M1/M2 output
    n_spike out    inverter M3/M4 output, C_res to n_mem
    n_k            M5/M6 series node of the repolarizing path
    n_kslow        bias source ``v_kslow`` on M6's gate
    ======= ====== ===============================================

    The M5/M6 stack is the potassium-like path: it only conducts while the
    output is high, at a rate throttled by ``v_kslow``.
    """
    _check_kind(cfg, NeuronKind.ML)
    p = cfg.preset
    nodes = ["vdd", "n_mem", "n_a", "n_spike", "n_k", "n_kslow"]
    els = [
        _supply(cfg),
        VoltageSource("VKSLOW", cfg.bias_voltage("v_kslow"), "n_kslow", GROUND),
        CurrentSource("ISYN", cfg.i_syn, GROUND, "n_mem", dc_value=0.0),
        *_inverter("M1", "M2", "n_mem", "n_a", p),
        *_inverter("M3", "M4", "n_a", "n_spike", p),
        Mosfet("M5", p.nmos, d="n_mem", g="n_spike", s="n_k", b=GROUND),
        Mosfet("M6", p.nmos, d="n_k", g="n_kslow", s=GROUND, b=GROUND),
        Capacitor("CMEM", cfg.c_mem, "n_mem", GROUND),
        Capacitor("CRES", cfg.c_res, "n_spike", "n_mem"),
    ]
    labels = {"membrane": "n_mem", "spike_out": "n_spike", "synapse_in": "n_mem"}
    return _finish("ML", nodes, els, labels, p)


def build_ah(cfg: NeuronConfig) -> Circuit:
    """Axon-hillock cell, 5 transistors and a single capacitor.

    ======= ====== ===============================================
    node    label  connections
    ======= ====== ===============================================
    n_mem   mem    I_syn injected directly, M5 reset drain
    n_a            inverter M1/M2 output
    n_spike out    inverter M3/M4 output, C_res to n_mem
    ======= ====== ===============================================

    C_res is both the integrating capacitor (seen from n_mem through the
    low-impedance output) and the positive-feedback path; M5 drains n_mem
    while the output is high.
    """
    _check_kind(cfg, NeuronKind.AH)
    p = cfg.preset
    nodes = ["vdd", "n_mem", "n_a", "n_spike"]
    els = [
        _supply(cfg),
        CurrentSource("ISYN", cfg.i_syn, GROUND, "n_mem", dc_value=0.0),
        *_inverter("M1", "M2", "n_mem", "n_a", p),
        *_inverter("M3", "M4", "n_a", "n_spike", p),
        Mosfet("M5", p.nmos, d="n_mem", g="n_spike", s=GROUND, b=GROUND),
        Capacitor("CRES", cfg.c_res, "n_spike", "n_mem"),
    ]
    labels = {"membrane": "n_mem", "spike_out": "n_spike", "synapse_in": "n_mem"}
    return _finish("AH", nodes, els, labels, p)


BUILDERS = {NeuronKind.LIF: build_lif, NeuronKind.ML: build_ml, NeuronKind.AH: build_ah}


def build(cfg: NeuronConfig) -> Circuit:
    return BUILDERS[cfg.kind](cfg)
