"""Batch plotting for dynapsim CSV artifacts."""

__version__ = "0.1.0"
