"""Overcomplete deep subspace clustering from scratch in numpy."""

__version__ = "0.1.0"
