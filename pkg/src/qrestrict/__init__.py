"""Restriction-estimate toolkit for surfaces cut out by tuples of quadratic forms."""

__version__ = "0.1.0"
