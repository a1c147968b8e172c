"""Covariant (reparameterization-invariant) first-order learning rules."""

__version__ = "0.1.0"
