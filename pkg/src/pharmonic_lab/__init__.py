"""Discrete diagnostics for p-harmonic systems with antisymmetric potentials on the disc."""

__version__ = "0.1.0"
