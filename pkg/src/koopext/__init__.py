"""Koopman spectral toolkit.

Fits finite-dimensional Koopman approximations from trajectory data, enlarges
the computed eigenfunction set through the multiplicative algebra with
certified error bounds, bridges eigenfunction families across singularities,
and computes isochron/isostable phase coordinates, all validated against
closed-form benchmark systems.
"""
from . import bridge, core, dictionary, dynamics, eigensolve, extend, phase, regression

__all__ = [
    "core",
    "dynamics",
    "dictionary",
    "regression",
    "eigensolve",
    "extend",
    "bridge",
    "phase",
]

__version__ = "0.1.0"
