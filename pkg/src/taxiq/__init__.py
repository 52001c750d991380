"""Queueing-network analysis of two-sided taxi markets."""

__version__ = "0.1.0"
