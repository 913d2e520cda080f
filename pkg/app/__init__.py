"""Immersed-interface Navier-Stokes solver package."""

__version__ = "0.1.0"
