"""Finite-scale simulation of nonstandard lattice dynamics and stochastic
wave-function reduction."""

from nsqm.errors import DomainError, ShapeError, ValidationError

__all__ = ["DomainError", "ShapeError", "ValidationError"]
__version__ = "0.1.0"
