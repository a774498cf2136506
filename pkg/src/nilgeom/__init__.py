"""Computational toolkit for Nil (Heisenberg) geometry."""

__version__ = "0.1.0"
