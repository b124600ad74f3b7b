"""Steady-state power system analysis and state estimation."""

__version__ = "0.1.0"
