"""Collision-probability fields: Monte-Carlo labeling, learned CP estimation, chance-constrained planning."""

__version__ = "0.1.0"
