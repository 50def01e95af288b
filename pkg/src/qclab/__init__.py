"""Numerical Stoilow-decomposition toolkit for planar mappings."""

__version__ = "0.1.0"
