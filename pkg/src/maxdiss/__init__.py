"""Spectral certification and convex selection of maximal dissipative 2D flows."""

__version__ = "0.1.0"
