"""Crash-consistent checkpoint writing with layered integrity validation."""

__version__ = "0.1.0"
