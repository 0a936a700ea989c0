"""Numerical laboratory for bifurcation currents of polynomials with marked critical points."""

from .family import FamilySpec, Parameter

__version__ = "0.1.0"

__all__ = ["FamilySpec", "Parameter", "__version__"]
