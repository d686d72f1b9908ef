"""Gaussian adiabatic elimination for continuously monitored quantum systems."""

__version__ = "0.1.0"
