"""Thermal matrix-model dynamics, eigenvalue statistics, and a quantum oracle."""

__version__ = "0.1.0"
