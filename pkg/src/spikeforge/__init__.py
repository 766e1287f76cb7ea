"""Spiking-neuron circuit toolkit: compact device model, MNA transient
solver, behavioral reference models, spike metrics and design-space sweeps."""

__version__ = "0.1.0"
