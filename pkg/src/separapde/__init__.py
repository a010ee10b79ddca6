"""Separated-representation solvers for the Poisson equation on tensor-product meshes.

FEM, canonical decomposition (CD), greedy PGD, r-adaptive HiDeNN and
HiDeNN-PGD, mapped-domain PGD, and a study harness comparing their
energy-norm errors.
"""
from .assembly import PointLoad, SeparatedTerm, SourceTerm
from .fem import AnalyticSolution, NodalField, energy, energy_norm_error, solve_fem
from .mesh import Grid1D, TensorMesh, build_uniform_grid, uniform_mesh
from .separated import SeparatedSolution, dof_count, solve_cd, solve_pgd, svd_modes

__all__ = [
    "AnalyticSolution", "Grid1D", "NodalField", "PointLoad", "SeparatedSolution", "SeparatedTerm",
    "SourceTerm", "TensorMesh", "build_uniform_grid", "dof_count", "energy", "energy_norm_error",
    "solve_cd", "solve_fem", "solve_pgd", "svd_modes", "uniform_mesh",
]
__version__ = "0.1.0"
