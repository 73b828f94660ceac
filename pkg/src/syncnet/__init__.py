"""Distributed model-reference adaptive synchronization of heterogeneous agent networks."""

__version__ = "0.1.0"
