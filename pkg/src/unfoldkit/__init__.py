"""Binned and unbinned unfolding with profiled detector nuisance parameters."""

__version__ = "0.1.0"
