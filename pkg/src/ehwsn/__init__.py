"""Reliability-optimal energy management for energy-harvesting sensor networks."""

__version__ = "0.1.0"
