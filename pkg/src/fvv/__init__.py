"""Desk-scale free-viewpoint video pipeline."""

__version__ = "0.1.0"
