"""Numerical toolkit for focal points, Jacobi fields and singular Riemannian foliations."""

__version__ = "0.1.0"
