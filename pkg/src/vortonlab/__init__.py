"""Vorton dynamics and regularized Euler kernels."""

__version__ = "0.1.0"
