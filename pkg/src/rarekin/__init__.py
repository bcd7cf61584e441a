"""Rarefaction-wave kinetics: Euler waves, collision operators, and the
Boltzmann-to-Euler hydrodynamic limit laboratory."""

__version__ = "0.1.0"
