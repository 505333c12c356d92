"""Finite-element magnetoquasistatics in 2D with an energy-based vector hysteresis model."""

__version__ = "0.1.0"
