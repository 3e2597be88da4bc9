"""Simulation and checks for conformable time-fractional stochastic equations."""

__version__ = "0.1.0"
