"""Manufactured Stokes benchmark problems with exact solutions.

Three cases: a 2D vortex in the unit square, a 3D trigonometric flow in
the unit cube, and a 3D rotational flow in an L-shaped cylinder. The body
force is f = -nu*Lap(u) + grad(p), derived symbolically; boundary data is
the trace of the exact velocity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy as sp

from .mesh import (build_lshape_cylinder_mesh, build_unit_cube_mesh,
                   build_unit_square_mesh)

PROBLEM_IDS = ("vortex2d", "cube3d", "lshape3d")


@dataclass(frozen=True)
class ProblemSpec:
    id: str
    dim: int
    nu: float
    rho_default: float
    mesh_builder: Callable = field(repr=False)
    u: Callable = field(repr=False)          # (N, d) -> (N, d)
    grad_u: Callable = field(repr=False)     # (N, d) -> (N, d, d)
    p: Callable = field(repr=False)          # (N, d) -> (N,)
    f: Callable = field(repr=False)          # (N, d) -> (N, d)
    g: Callable = field(repr=False)          # boundary trace of u
    homogeneous_bc: bool = False

    def build_mesh(self, n):
        return self.mesh_builder(n)


def _vectorize(exprs, syms):
    funcs = [sp.lambdify(syms, e, modules="numpy") for e in exprs]

    def wrapped(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols = [x[:, i] for i in range(len(syms))]
        out = np.empty((x.shape[0], len(funcs)))
        for i, fn in enumerate(funcs):
            out[:, i] = np.broadcast_to(fn(*cols), x.shape[0])
        return out

    return wrapped


def _scalarize(expr, syms):
    fn = sp.lambdify(syms, expr, modules="numpy")

    def wrapped(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols = [x[:, i] for i in range(len(syms))]
        return np.broadcast_to(fn(*cols), x.shape[0]).astype(float)

    return wrapped


def _gradient_func(u_exprs, syms):
    d = len(syms)
    comps = [[sp.diff(u_exprs[i], syms[j]) for j in range(d)] for i in range(d)]
    funcs = [[sp.lambdify(syms, comps[i][j], modules="numpy") for j in range(d)]
             for i in range(d)]

    def wrapped(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols = [x[:, i] for i in range(d)]
        out = np.empty((x.shape[0], d, d))
        for i in range(d):
            for j in range(d):
                out[:, i, j] = np.broadcast_to(funcs[i][j](*cols), x.shape[0])
        return out

    return wrapped


@lru_cache(maxsize=None)
def _symbolic(problem_id):
    if problem_id == "vortex2d":
        x, y = sp.symbols("x y")
        syms = (x, y)
        u = [10 * x**2 * (x - 1) ** 2 * y * (y - 1) * (2 * y - 1),
             -10 * x * (x - 1) * (2 * x - 1) * y**2 * (y - 1) ** 2]
        p = 10 * (2 * x - 1) * (2 * y - 1)
        grad_p = [sp.diff(p, s) for s in syms]
    elif problem_id == "cube3d":
        x, y, z = sp.symbols("x y z")
        syms = (x, y, z)
        u = [sp.sin(sp.pi * x) * sp.cos(sp.pi * y) - sp.sin(sp.pi * x) * sp.cos(sp.pi * z),
             sp.sin(sp.pi * y) * sp.cos(sp.pi * z) - sp.sin(sp.pi * y) * sp.cos(sp.pi * x),
             sp.sin(sp.pi * z) * sp.cos(sp.pi * x) - sp.sin(sp.pi * z) * sp.cos(sp.pi * y)]
        p = sp.sin(sp.pi * x) * sp.sin(sp.pi * y) * sp.sin(sp.pi * z)
        grad_p = [sp.diff(p, s) for s in syms]
    elif problem_id == "lshape3d":
        x, y, z = sp.symbols("x y z")
        syms = (x, y, z)
        r = x**2 + y**2 + 1
        u = [-y / r, x / r, sp.Integer(0)]
        p = sp.Abs(2 * x - 1)
        # one-sided derivative at the kink x = 1/2; quadrature points never
        # land on the plane for the structured meshes used here
        grad_p = [2 * sp.sign(2 * x - 1), sp.Integer(0), sp.Integer(0)]
    else:
        raise ValueError(f"unknown problem id: {problem_id}")

    lap_u = [sum(sp.diff(ui, s, 2) for s in syms) for ui in u]
    return syms, u, p, grad_p, lap_u


def get_problem(problem_id, nu):
    """Build the ProblemSpec for one of the three benchmark cases."""
    if problem_id not in PROBLEM_IDS:
        raise ValueError(f"unknown problem id: {problem_id}")
    syms, u_sym, p_sym, grad_p_sym, lap_u_sym = _symbolic(problem_id)
    d = len(syms)

    u = _vectorize(u_sym, syms)
    grad_u = _gradient_func(u_sym, syms)
    p = _scalarize(p_sym, syms)
    f_sym = [-nu * lap_u_sym[i] + grad_p_sym[i] for i in range(d)]
    f = _vectorize(f_sym, syms)

    builders = {
        "vortex2d": build_unit_square_mesh,
        "cube3d": build_unit_cube_mesh,
        "lshape3d": build_lshape_cylinder_mesh,
    }
    return ProblemSpec(
        id=problem_id,
        dim=d,
        nu=nu,
        rho_default=10.0 if d == 2 else 2.0,
        mesh_builder=builders[problem_id],
        u=u,
        grad_u=grad_u,
        p=p,
        f=f,
        g=u,
        homogeneous_bc=(problem_id == "vortex2d"),
    )
