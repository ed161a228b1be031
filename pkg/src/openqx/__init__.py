"""Exact reduced dynamics of quadratic open quantum systems."""

__version__ = "0.1.0"
