"""Exact-arithmetic partial reflective oracles and the agents built on them."""

__version__ = "0.1.0"
