"""Closed-loop simulation of a V2X-aided on-ramp merge."""

__version__ = "0.1.0"
