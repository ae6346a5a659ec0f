"""Multimode high-speed quantum memory simulator with thermal storage models."""

__version__ = "1.0.0"
