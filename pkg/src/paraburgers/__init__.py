"""Paradifferential gauge transforms for weakly dispersive Burgers flow."""

__version__ = "0.1.0"
