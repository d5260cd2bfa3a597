"""Exact symbolic dynamic programming for hybrid MDPs over XADDs."""

__version__ = "0.1.0"
