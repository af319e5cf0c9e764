"""Landmark-driven time-frequency masking for single-channel speech enhancement."""

__version__ = "0.1.0"
