"""Variational quantum circuits for AC power flow, simulated classically."""
__version__ = "0.1.0"
