"""Certification and synthesis toolkit for LPV systems with Poisson parameter jumps."""

__version__ = "0.1.0"

from .polyalg import Box, Poly, PolyMatrix, StructuralError, VarSet

__all__ = ["Box", "Poly", "PolyMatrix", "StructuralError", "VarSet", "__version__"]
