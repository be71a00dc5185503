"""Simulation and measurement laboratory for regime-switching stochastic delay equations."""

__version__ = "0.1.0"
