"""Numerical lab for smooth solitary waves of the Degasperis-Procesi equation."""

__version__ = "0.1.0"
