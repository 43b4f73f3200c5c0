"""Stochastic heat equation on polygons: corner-singularity decomposition toolkit."""

__version__ = "0.1.0"
