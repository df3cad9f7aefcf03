"""Computable superdensity: ball measures, density degrees, scattered sets."""

__version__ = "0.1.0"
