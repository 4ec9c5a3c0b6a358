"""Variational models of misfit dislocations at semi-coherent interfaces."""

__version__ = "0.1.0"
