"""Distributed shape derivatives on triangular meshes.

Volume-integral (tensor-represented) shape derivatives of PDE-constrained
functionals, with FEM state/adjoint/material solvers and finite-difference
validation on transported meshes.
"""

__version__ = "0.1.0"
