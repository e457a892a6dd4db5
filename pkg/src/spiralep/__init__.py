"""Numerical solver and verification suite for smooth supersonic spiral
Euler-Poisson flows in a concentric cylinder."""

__version__ = "0.1.0"
