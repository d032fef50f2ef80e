"""Probabilistic approximate optimisation on emulated pgSPAD p-bit arrays."""

__version__ = "0.1.0"
