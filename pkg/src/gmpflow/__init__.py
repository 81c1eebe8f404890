"""Finite-gap comb maps, GMP block matrices, the periodic Jacobi flow,
and the associated sum-rule diagnostics."""

__version__ = "0.1.0"
