"""Thermal states of spin chains as convex combinations of matrix product states."""

__version__ = "0.1.0"
