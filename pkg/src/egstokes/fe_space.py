"""Reference bases, simplex quadrature, and the global DoF layout.

The velocity space couples continuous vector-valued P1 functions with one
discontinuous enrichment mode per element, c*(x - x_K) with x_K the
element centroid. Pressures are piecewise constants. Global unknowns are
ordered (enrichment, continuous, pressure) to match the block structure
of the assembled systems.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the reference simplex in barycentric coordinates.

    Weights sum to 1; the physical integral is |K| * sum(w_i f(x_i)).
    """

    dim: int
    degree: int
    points: np.ndarray   # (nq, dim+1) barycentric
    weights: np.ndarray  # (nq,), positive, sum 1


def _gauss01(n):
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _gauss_jacobi01(n, alpha):
    # nodes/weights for integral_0^1 f(t) (1-t)^alpha dt
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


def _conical_rule(dim, npts):
    """Stroud conical-product rule on the unit simplex, degree 2*npts-1."""
    if dim == 2:
        u, wu = _gauss_jacobi01(npts, 1.0)
        v, wv = _gauss01(npts)
        U, V = np.meshgrid(u, v, indexing="ij")
        x = U.ravel()
        y = (V * (1.0 - U)).ravel()
        w = np.outer(wu, wv).ravel()
        pts = np.column_stack([x, y])
    else:
        u, wu = _gauss_jacobi01(npts, 2.0)
        v, wv = _gauss_jacobi01(npts, 1.0)
        t, wt = _gauss01(npts)
        U, V, T = np.meshgrid(u, v, t, indexing="ij")
        x = U.ravel()
        y = (V * (1.0 - U)).ravel()
        z = (T * (1.0 - U) * (1.0 - V)).ravel()
        w = np.einsum("i,j,k->ijk", wu, wv, wt).ravel()
        pts = np.column_stack([x, y, z])
    return pts, w


def _to_barycentric(pts):
    return np.column_stack([1.0 - pts.sum(axis=1), pts])


@lru_cache(maxsize=None)
def quadrature_rule(dim, degree):
    """Positive-weight rule exact for polynomials up to ``degree``."""
    if dim not in (1, 2, 3):
        raise ValueError("dim must be 1, 2, or 3")
    if degree < 0 or degree > 5:
        raise ValueError("supported polynomial degrees are 0..5")
    degree = max(degree, 1)

    if dim == 1:
        t, w = _gauss01((degree + 2) // 2)
        pts = np.column_stack([1.0 - t, t])
        return QuadratureRule(1, degree, pts, w / w.sum())

    if dim == 2 and degree == 1:
        pts = np.array([[1 / 3, 1 / 3, 1 / 3]])
        return QuadratureRule(2, 1, pts, np.array([1.0]))
    if dim == 2 and degree == 2:
        pts = np.array([
            [2 / 3, 1 / 6, 1 / 6],
            [1 / 6, 2 / 3, 1 / 6],
            [1 / 6, 1 / 6, 2 / 3],
        ])
        return QuadratureRule(2, 2, pts, np.full(3, 1 / 3))
    if dim == 3 and degree == 1:
        pts = np.array([[0.25, 0.25, 0.25, 0.25]])
        return QuadratureRule(3, 1, pts, np.array([1.0]))
    if dim == 3 and degree == 2:
        a = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
        b = (5.0 - np.sqrt(5.0)) / 20.0
        pts = np.full((4, 4), b)
        np.fill_diagonal(pts, a)
        return QuadratureRule(3, 2, pts, np.full(4, 0.25))

    npts = (degree + 2) // 2
    pts, w = _conical_rule(dim, npts)
    # raw weights sum to the reference volume 1/d!; normalize to 1
    w = w * factorial(dim)
    return QuadratureRule(dim, degree, _to_barycentric(pts), w)


@dataclass(frozen=True)
class DofLayout:
    """Global index map in the block order (enrichment, continuous, pressure).

    Enrichment: one scalar DoF per element, ids [0, n_elements).
    Continuous: ``dim`` DoFs per vertex, interleaved by component, ids
    [n_elements, n_elements + dim*n_vertices).
    Pressure: one DoF per element following the velocity block.
    """

    n_elements: int
    n_vertices: int
    dim: int
    boundary_vertex: np.ndarray = field(repr=False)

    @property
    def n_enrichment(self):
        return self.n_elements

    @property
    def n_continuous(self):
        return self.dim * self.n_vertices

    @property
    def n_velocity(self):
        return self.n_elements + self.dim * self.n_vertices

    @property
    def n_pressure(self):
        return self.n_elements

    @property
    def n_total(self):
        return self.n_velocity + self.n_pressure

    def enrichment_dof(self, element):
        return element

    def continuous_dof(self, vertex, component):
        return self.n_elements + vertex * self.dim + component

    def pressure_dof(self, element):
        return self.n_velocity + element

    def continuous_dofs_of_vertices(self, verts):
        """All component DoFs of the given vertices, component fastest."""
        verts = np.asarray(verts, dtype=np.int64)
        base = self.n_elements + verts[:, None] * self.dim
        return (base + np.arange(self.dim)[None, :]).ravel()

    def boundary_velocity_dofs(self):
        """Continuous DoFs sitting on boundary vertices."""
        verts = np.nonzero(self.boundary_vertex)[0]
        return self.continuous_dofs_of_vertices(verts)


def build_dof_layout(mesh):
    return DofLayout(
        n_elements=mesh.n_elements,
        n_vertices=mesh.n_vertices,
        dim=mesh.dim,
        boundary_vertex=mesh.boundary_vertex_mask(),
    )


def p1_gradients(mesh):
    """Constant gradients of the barycentric basis, shape (ne, d+1, d)."""
    v = mesh.vertices[mesh.elements]
    edges = v[:, 1:, :] - v[:, :1, :]
    # gradient of lambda_j is row j-1 of the inverse transposed edge matrix
    einv_t = np.linalg.inv(np.swapaxes(edges, 1, 2))
    grads = np.empty((mesh.n_elements, mesh.dim + 1, mesh.dim))
    grads[:, 1:, :] = einv_t
    grads[:, 0, :] = -einv_t.sum(axis=1)
    return grads


def eval_p1_basis(mesh, element, point):
    """Barycentric values and gradients of the P1 basis of one element.

    Returns (values (d+1,), gradients (d+1, d)); values sum to 1 and
    gradients sum to the zero vector.
    """
    point = np.asarray(point, dtype=float)
    verts = mesh.vertices[mesh.elements[element]]
    edges = (verts[1:] - verts[0]).T
    if abs(np.linalg.det(edges)) < 1e-300:
        raise ValueError("degenerate element")
    lam = np.linalg.solve(edges, point - verts[0])
    values = np.concatenate([[1.0 - lam.sum()], lam])
    einv = np.linalg.inv(edges)
    grads = np.vstack([-einv.sum(axis=0), einv])
    return values, grads


def eval_enrichment(mesh, element, point):
    """Value (x - x_K) and gradient (identity) of the enrichment mode."""
    point = np.asarray(point, dtype=float)
    if mesh.element_volume[element] <= 0.0:
        raise ValueError("degenerate element")
    return point - mesh.element_centroid[element], np.eye(mesh.dim)


class EgFunction:
    """Velocity field given by a coefficient vector over the DoF layout.

    The continuous and enrichment parts are read from disjoint blocks, so
    the decomposition v = v^C + v^D is unique by construction.
    """

    def __init__(self, mesh, layout, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (layout.n_velocity,):
            raise ValueError("coefficient vector does not match layout")
        self.mesh = mesh
        self.layout = layout
        self.coeffs = coeffs

    @property
    def enrichment_coeffs(self):
        return self.coeffs[: self.layout.n_enrichment]

    @property
    def continuous_coeffs(self):
        """Vertex values, shape (n_vertices, dim)."""
        return self.coeffs[self.layout.n_enrichment:].reshape(
            self.layout.n_vertices, self.layout.dim)

    def continuous_part(self, element, point):
        values, _ = eval_p1_basis(self.mesh, element, point)
        return values @ self.continuous_coeffs[self.mesh.elements[element]]

    def enrichment_part(self, element, point):
        val, _ = eval_enrichment(self.mesh, element, point)
        return self.enrichment_coeffs[element] * val

    def value(self, element, point):
        return self.continuous_part(element, point) + self.enrichment_part(element, point)

    def gradient(self, element, point):
        """Spatial gradient dv_i/dx_j, constant within the element."""
        _, grads = eval_p1_basis(self.mesh, element, point)
        nodal = self.continuous_coeffs[self.mesh.elements[element]]
        gc = nodal.T @ grads
        return gc + self.enrichment_coeffs[element] * np.eye(self.mesh.dim)
