"""Deterministic simulator and testbed for smart-home cloud security."""

__version__ = "0.1.0"
