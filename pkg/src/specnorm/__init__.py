"""Spectral embedding norm for separating small clusters from a large background."""

__version__ = "0.1.0"
