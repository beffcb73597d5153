"""Robust transmit beamforming for coherent distributed sensing-and-communication networks."""

__version__ = "0.1.0"
