"""Numerical laboratory for planar vortex sheets."""

__version__ = "0.1.0"
