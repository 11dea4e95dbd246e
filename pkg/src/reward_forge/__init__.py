"""Evolutionary reward discovery for a vectorised in-hand rotation surrogate."""

__version__ = "0.1.0"
