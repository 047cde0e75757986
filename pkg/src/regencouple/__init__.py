"""Simulation, coupling and verification of multivariate regenerative processes."""

__version__ = "0.1.0"
