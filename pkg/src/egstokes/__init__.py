"""Enriched Galerkin Stokes solvers with pressure-robust variants,
static condensation, and block preconditioners."""

from .mesh import (SimplicialMesh, build_unit_square_mesh,
                   build_unit_cube_mesh, build_lshape_cylinder_mesh)
from .fe_space import DofLayout, build_dof_layout, quadrature_rule
from .problems import PROBLEM_IDS, get_problem
from .assembly import assemble_block_system
from .system import VARIANTS, build_system, solve_direct
from .solver import build_preconditioner, condition_number, gmres, minres, solve_krylov
from .analysis import compute_error_report, eoc

__all__ = [
    "SimplicialMesh", "build_unit_square_mesh", "build_unit_cube_mesh",
    "build_lshape_cylinder_mesh", "DofLayout", "build_dof_layout",
    "quadrature_rule", "PROBLEM_IDS", "get_problem", "assemble_block_system",
    "VARIANTS", "build_system", "solve_direct", "build_preconditioner",
    "condition_number", "gmres", "minres", "solve_krylov",
    "compute_error_report", "eoc",
]

__version__ = "0.1.0"
