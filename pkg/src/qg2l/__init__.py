"""Stochastic two-layer quasi-geostrophic simulator and generalized-coupling toolkit."""

__version__ = "0.1.0"
