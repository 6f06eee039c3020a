"""Explicit-state checking of interaction-preserving abstractions."""

__version__ = "0.1.0"
