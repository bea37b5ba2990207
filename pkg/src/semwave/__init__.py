"""Spectral element free-surface Navier-Stokes wave solver on a sigma-transformed domain."""
__version__ = "0.1.0"
