"""Saddle-point systems for the four method variants.

``st`` and ``pr`` share one operator and differ only in the load; ``ppr``
swaps the enrichment block for its diagonal; ``cpr`` statically condenses
the enrichment DoFs out of the perturbed system, leaving a stabilized
P1-P0 problem plus an exact back-substitution.

Strong Dirichlet elimination of the continuous boundary DoFs happens
before condensation; eliminated rows carry ``nu`` on the diagonal so that
every operator block scales exactly linearly in the viscosity. The
direct solver exploits that scaling to stay well conditioned at small
``nu``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import assemble_perturbed

VARIANTS = ("st", "pr", "ppr", "cpr")
VARIANT_LABELS = {"st": "ST-EG", "pr": "PR-EG", "ppr": "PPR-EG", "cpr": "CPR-EG"}


@dataclass
class EliminationData:
    """Pieces of the perturbed system retained for enrichment recovery."""

    D_diag: np.ndarray
    A_DC: sp.csr_matrix = field(repr=False)
    G_D: sp.csr_matrix = field(repr=False)
    f_D: np.ndarray = field(repr=False)


@dataclass
class StokesSystem:
    """One solvable saddle-point system.

    ``A`` is the velocity block (condensed for ``cpr``), ``G`` the
    pressure coupling, and ``C`` the pressure-pressure block (zero except
    for the condensed variant, where it is -A_p_E). The pressure unknown
    of this symmetric form is the negative of the physical pressure.
    """

    variant: str
    mesh: object
    layout: object
    nu: float
    rho: float
    A: sp.csr_matrix = field(repr=False)
    G: sp.csr_matrix = field(repr=False)
    C: sp.csr_matrix = field(repr=False)
    rhs_u: np.ndarray = field(repr=False)
    rhs_p: np.ndarray = field(repr=False)
    M_p: sp.csr_matrix = field(repr=False)
    A_p_E: sp.csr_matrix | None = field(default=None, repr=False)
    elimination: EliminationData | None = field(default=None, repr=False)

    @property
    def condensed(self):
        return self.variant == "cpr"

    @property
    def n_u(self):
        return self.A.shape[0]

    @property
    def n_p(self):
        return self.layout.n_pressure

    @property
    def rhs(self):
        return np.concatenate([self.rhs_u, self.rhs_p])

    def saddle_matrix(self):
        return sp.bmat([[self.A, self.G], [self.G.T, self.C]], format="csr")

    def scaled_saddle_matrix(self):
        """The same system with the pressure unknown scaled by nu.

        Every block of the result is independent of nu (up to rounding in
        the condensed blocks), which keeps direct factorizations well
        conditioned for small viscosities. Solutions map back via
        u = u_scaled, p = nu * p_scaled, and the right-hand side is
        (rhs_u / nu, rhs_p).
        """
        nu = self.nu
        return sp.bmat([[self.A * (1.0 / nu), self.G],
                        [self.G.T, self.C * nu]], format="csr")

    def split(self, x):
        return x[: self.n_u], x[self.n_u:]


def apply_strong_bc(A, G, rhs_u, rhs_p, dofs, values, diag_value):
    """Symmetric elimination of prescribed velocity DoFs.

    Known columns are moved to the right-hand sides; eliminated rows are
    replaced by diag_value * identity so the reduced operator keeps the
    exact viscosity scaling of the interior rows.
    """
    n = A.shape[0]
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    lift = np.zeros(n)
    lift[dofs] = values
    rhs_u = rhs_u - A @ lift
    rhs_p = rhs_p - G.T @ lift
    keep = np.ones(n)
    keep[dofs] = 0.0
    K = sp.diags(keep)
    ind = np.zeros(n)
    ind[dofs] = 1.0
    A_bc = (K @ A @ K + diag_value * sp.diags(ind)).tocsr()
    G_bc = (K @ G).tocsr()
    rhs_u = keep * rhs_u
    rhs_u[dofs] = diag_value * values
    return A_bc, G_bc, rhs_u, rhs_p


def condense(D_diag, A_DC, A_CD, A_CC, G_D, G_C, f_D, f_C, g_P):
    """Schur complement of the (diagonalized) enrichment block.

    Returns (A_E, G_E, A_p_E, f_E_u, f_E_p); the condensed saddle matrix
    is [[A_E, G_E], [G_E^T, -A_p_E]].
    """
    if np.any(D_diag <= 0.0):
        raise ValueError("nonpositive enrichment diagonal; increase the penalty")
    Dinv = sp.diags(1.0 / D_diag)
    A_E = (A_CC - A_CD @ Dinv @ A_DC).tocsr()
    G_E = (G_C - A_CD @ Dinv @ G_D).tocsr()
    A_p_E = (G_D.T @ Dinv @ G_D).tocsr()
    f_E_u = f_C - A_CD @ (f_D / D_diag)
    f_E_p = g_P - G_D.T @ (f_D / D_diag)
    return A_E, G_E, A_p_E, f_E_u, f_E_p


def recover_enrichment(U_C, P, elim):
    """Back-substitute the eliminated enrichment DoFs.

    ``P`` is the raw pressure unknown of the saddle form (the negated
    physical pressure).
    """
    return (elim.f_D - elim.A_DC @ U_C - elim.G_D @ P) / elim.D_diag


def build_system(variant, bs):
    """Turn assembled blocks into a solvable system for one variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant: {variant}")
    layout = bs.layout
    perturbed = variant in ("ppr", "cpr")
    A_u = bs.velocity_matrix(perturbed=perturbed)
    G = bs.coupling_matrix()

    if variant == "st":
        f_D, f_C = bs.f_D_plain, bs.f_C_plain
    else:
        f_D, f_C = bs.f_D_recon, bs.f_C_recon
    rhs_u = np.concatenate([f_D, f_C]) + bs.boundary.momentum
    rhs_p = bs.boundary.continuity.copy()

    A_u, G, rhs_u, rhs_p = apply_strong_bc(
        A_u, G, rhs_u, rhs_p,
        bs.boundary.dirichlet_dofs, bs.boundary.dirichlet_values, bs.nu)

    ne = layout.n_enrichment
    if variant != "cpr":
        C = sp.csr_matrix((layout.n_pressure, layout.n_pressure))
        return StokesSystem(variant, bs.mesh, layout, bs.nu, bs.rho,
                            A_u, G, C, rhs_u, rhs_p, bs.M_p)

    D_diag = A_u.diagonal()[:ne]
    A_DC = A_u[:ne, ne:].tocsr()
    A_CD = A_u[ne:, :ne].tocsr()
    A_CC = A_u[ne:, ne:].tocsr()
    G_D = G[:ne, :].tocsr()
    G_C = G[ne:, :].tocsr()
    A_E, G_E, A_p_E, f_E_u, f_E_p = condense(
        D_diag, A_DC, A_CD, A_CC, G_D, G_C, rhs_u[:ne], rhs_u[ne:], rhs_p)
    elim = EliminationData(D_diag, A_DC, G_D, rhs_u[:ne].copy())
    return StokesSystem(variant, bs.mesh, layout, bs.nu, bs.rho,
                        A_E, G_E, (-A_p_E).tocsr(), f_E_u, f_E_p, bs.M_p,
                        A_p_E=A_p_E, elimination=elim)


def fix_pressure_gauge(p, mesh):
    """Project a pressure vector onto the mean-zero subspace."""
    vol = mesh.element_volume
    return p - (vol @ p) / vol.sum()


def _pin_dof(M, rhs, j):
    n = M.shape[0]
    keep = np.ones(n)
    keep[j] = 0.0
    K = sp.diags(keep)
    ind = sp.csr_matrix(([1.0], ([j], [j])), shape=(n, n))
    rhs = keep * rhs
    return (K @ M @ K + ind).tocsr(), rhs


@dataclass
class Solution:
    """Solved coefficients: full velocity vector and the physical,
    mean-zero pressure."""

    variant: str
    u: np.ndarray
    p: np.ndarray


def finalize_solution(system, x):
    """Recover (u, physical p) from a raw saddle solution vector."""
    U, P = system.split(x)
    p = fix_pressure_gauge(-P, system.mesh)
    if system.condensed:
        U_D = recover_enrichment(U, P, system.elimination)
        U = np.concatenate([U_D, U])
    return Solution(system.variant, U, p)


def solve_direct(system):
    """Sparse direct solve with the pressure gauge pinned to one DoF.

    The factorization runs on the viscosity-rescaled form, so accuracy is
    uniform in nu; afterwards the pressure is unscaled, negated to the
    physical sign, and projected to zero mean.
    """
    nu = system.nu
    M = system.scaled_saddle_matrix()
    rhs = np.concatenate([system.rhs_u / nu, system.rhs_p])
    M, rhs = _pin_dof(M, rhs, M.shape[0] - 1)
    lu = spla.splu(M.tocsc())
    x = lu.solve(rhs)
    # refinement with extended-precision residuals pushes the forward
    # error to rounding level, which matters for the divergence of the
    # reconstructed velocity and for viscosity invariance of the
    # velocity coefficients at small nu
    M_hi = M.astype(np.longdouble)
    rhs_hi = rhs.astype(np.longdouble)
    x = x.astype(np.longdouble)
    rnorm = np.inf
    for _ in range(6):
        r = rhs_hi - M_hi @ x
        rn = float(np.linalg.norm(r.astype(float)))
        if not rn < rnorm:
            break
        rnorm = rn
        x = x + lu.solve(r.astype(float))
    x = x.astype(float)
    x[system.n_u:] *= nu
    return finalize_solution(system, x)
