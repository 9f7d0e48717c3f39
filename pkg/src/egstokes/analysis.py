"""Discretization-error measurement and convergence diagnostics.

The velocity error uses the mesh-dependent energy norm: broken H1
seminorm plus the penalty-weighted facet jump seminorm. Pressure errors
are plain L2 and the auxiliary distance to the elementwise mean of the
exact pressure; the exact pressure is shifted to zero mean first since
the discrete pressure is gauged that way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import reconstruct
from .fe_space import p1_gradients, quadrature_rule

ERROR_QUAD_DEGREE = 5


@dataclass
class ErrorReport:
    variant: str
    h: float
    nu: float
    velocity_energy: float
    pressure_l2: float
    pressure_aux: float
    max_divergence: float


def mesh_size(mesh):
    """Largest element diameter (longest edge over all elements)."""
    v = mesh.vertices[mesh.elements]
    hmax = 0.0
    for i in range(mesh.dim + 1):
        for j in range(i + 1, mesh.dim + 1):
            hmax = max(hmax, np.linalg.norm(v[:, i] - v[:, j], axis=1).max())
    return hmax


def _velocity_parts(layout, u_coeffs):
    enr = u_coeffs[: layout.n_enrichment]
    cont = u_coeffs[layout.n_enrichment:].reshape(layout.n_vertices, layout.dim)
    return enr, cont


def energy_error(mesh, layout, u, grad_u, u_coeffs, rho):
    """Energy-norm distance between the exact velocity and a discrete one.

    ``u`` supplies boundary traces for the boundary jump term; ``grad_u``
    the exact gradient for the volume term.
    """
    d = mesh.dim
    grads = p1_gradients(mesh)
    enr, cont = _velocity_parts(layout, np.asarray(u_coeffs, dtype=float))
    nodal = cont[mesh.elements]                        # (ne, d+1, d)
    grad_h = np.einsum("kic,kid->kcd", nodal, grads)
    grad_h += enr[:, None, None] * np.eye(d)

    rule = quadrature_rule(d, ERROR_QUAD_DEGREE)
    w = rule.weights
    X = np.einsum("qi,kid->kqd", rule.points, mesh.vertices[mesh.elements])
    Gex = grad_u(X.reshape(-1, d)).reshape(mesh.n_elements, -1, d, d)
    diff = Gex - grad_h[:, None, :, :]
    vol_term = np.einsum("q,kqcd,kqcd,k->", w, diff, diff, mesh.element_volume)

    frule = quadrature_rule(d - 1, ERROR_QUAD_DEGREE)
    fw = frule.weights
    jump_term = 0.0
    for fid in range(mesh.n_facets):
        kp = mesh.facet_plus[fid]
        he = mesh.facet_h[fid]
        me = mesh.facet_measure[fid]
        Xf = frule.points @ mesh.vertices[mesh.facet_vertices[fid]]
        if mesh.facet_boundary[fid]:
            # (g - u_h) on the boundary: full one-sided trace
            rel = Xf - mesh.element_centroid[kp]
            lam = 1.0 / (d + 1) + rel @ grads[kp].T
            uh = lam @ nodal[kp] + enr[kp] * rel
            jump = u(Xf) - uh
        else:
            km = mesh.facet_minus[fid]
            jump = (enr[kp] * (Xf - mesh.element_centroid[kp])
                    - enr[km] * (Xf - mesh.element_centroid[km]))
        jump_term += me / he * (fw @ np.einsum("qc,qc->q", jump, jump))

    return np.sqrt(vol_term + rho * jump_term)


def pressure_errors(mesh, p, p_h):
    """(L2 error, auxiliary error vs. the elementwise exact mean).

    The exact pressure is recentered to zero mean over the domain before
    comparison.
    """
    d = mesh.dim
    rule = quadrature_rule(d, ERROR_QUAD_DEGREE)
    w = rule.weights
    vol = mesh.element_volume
    X = np.einsum("qi,kid->kqd", rule.points, mesh.vertices[mesh.elements])
    P = p(X.reshape(-1, d)).reshape(mesh.n_elements, -1)
    p0 = P @ w                                        # elementwise mean
    mean = (vol @ p0) / vol.sum()
    P -= mean
    p0 = p0 - mean

    p_h = np.asarray(p_h, dtype=float)
    l2 = np.sqrt(np.einsum("q,kq,k->", w, (P - p_h[:, None]) ** 2, vol))
    aux = np.sqrt(vol @ (p0 - p_h) ** 2)
    return l2, aux


def eoc(errors, hs):
    """Empirical convergence rates of consecutive (error, h) pairs."""
    errors = np.asarray(errors, dtype=float)
    hs = np.asarray(hs, dtype=float)
    if errors.size != hs.size:
        raise ValueError("errors and mesh sizes must align")
    if np.any(errors <= 0.0):
        raise ValueError("errors must be positive")
    if np.any(np.diff(hs) >= 0.0):
        raise ValueError("mesh sizes must be strictly decreasing")
    return list(np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:]))


def divergence_report(field):
    """Constant per-element divergence of a reconstructed velocity."""
    return field.divergence()


def compute_error_report(problem, mesh, layout, solution, rho):
    vel = energy_error(mesh, layout, problem.u, problem.grad_u,
                       solution.u, rho)
    l2, aux = pressure_errors(mesh, problem.p, solution.p)
    div = divergence_report(reconstruct(mesh, layout, solution.u))
    return ErrorReport(solution.variant, mesh_size(mesh), problem.nu,
                       vel, l2, aux, float(np.abs(div).max()))
