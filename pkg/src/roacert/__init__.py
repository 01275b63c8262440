"""Certified inner approximations of regions of attraction via SOS programming."""

__version__ = "0.1.0"
