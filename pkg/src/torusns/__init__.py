"""Periodic-torus incompressible Navier-Stokes solver and diagnostics."""

__version__ = "0.1.0"
