"""Evolutionary search over actor-critic loss graphs."""

__version__ = "0.1.0"
