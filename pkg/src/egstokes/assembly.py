"""Sparse assembly of the interior-penalty velocity form, the divergence
coupling, the velocity reconstruction operator, and load/boundary vectors.

Conventions
-----------
Global velocity DoFs follow the layout (enrichment, continuous); pressure
DoFs are per element. The saddle system is written symmetrically as

    [ A_u  G ] [U]   [f_u]
    [ G^T  0 ] [P] = [g_P]

with G the matrix of the divergence coupling b. The pressure unknown P
in this symmetric form is the negative of the physical pressure; the
solution path negates it on recovery. All viscosity-dependent blocks are
assembled at unit viscosity and scaled, so scaling in nu is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

from .fe_space import quadrature_rule, p1_gradients

LOAD_QUAD_DEGREE = 5


def _facet_quad_points(mesh, fid, rule):
    """Physical quadrature points on one facet, shape (nq, d)."""
    return rule.points @ mesh.vertices[mesh.facet_vertices[fid]]


def _p1_values_at(mesh, grads, element, X):
    """Barycentric basis values of one element at points X, shape (nq, d+1)."""
    rel = X - mesh.element_centroid[element]
    return 1.0 / (mesh.dim + 1) + rel @ grads[element].T


def _opposite_local_index(mesh, element, fid):
    loc = np.nonzero(mesh.element_facets[element] == fid)[0]
    return int(loc[0])


def assemble_velocity_matrix(mesh, layout, nu, rho):
    """Full velocity-velocity matrix of the IPDG form over all facets."""
    d = mesh.dim
    grads = p1_gradients(mesh)
    vol = mesh.element_volume
    ne, nv = mesh.n_elements, mesh.n_vertices
    rows, cols, vals = [], [], []

    # volume gradient terms; all gradients are constant per element
    # continuous-continuous: same-component coupling vol * g_i.g_j
    gg = np.einsum("kid,kjd->kij", grads, grads) * vol[:, None, None]
    cdofs = layout.continuous_dofs_of_vertices(np.arange(nv)).reshape(nv, d)
    elem_cdofs = cdofs[mesh.elements]  # (ne, d+1, d)
    for c in range(d):
        dof = elem_cdofs[:, :, c]
        rows.append(np.repeat(dof, d + 1, axis=1).ravel())
        cols.append(np.tile(dof, (1, d + 1)).ravel())
        vals.append(gg.ravel())
    # enrichment-enrichment: grad is the identity, integrand d * |K|
    edof = np.arange(ne)
    rows.append(edof)
    cols.append(edof)
    vals.append(d * vol)
    # enrichment-continuous: vol * dg_i/dx_c, symmetric pair
    for c in range(d):
        dof = elem_cdofs[:, :, c]
        er = np.repeat(edof[:, None], d + 1, axis=1)
        v = vol[:, None] * grads[:, :, c]
        rows.append(er.ravel()); cols.append(dof.ravel()); vals.append(v.ravel())
        rows.append(dof.ravel()); cols.append(er.ravel()); vals.append(v.ravel())

    # facet terms: consistency and penalty; integrands are products of
    # linears, exact with a degree-2 facet rule
    rule = quadrature_rule(d - 1, 2)
    w = rule.weights
    nq = w.size
    ident = np.eye(d)

    for fid in range(mesh.n_facets):
        kp = mesh.facet_plus[fid]
        n = mesh.facet_normal[fid]
        he = mesh.facet_h[fid]
        me = mesh.facet_measure[fid]
        X = _facet_quad_points(mesh, fid, rule)

        if mesh.facet_boundary[fid]:
            verts = mesh.elements[kp]
            dofs = np.concatenate([[kp], elem_cdofs[kp].ravel()])
            m = dofs.size
            J = np.zeros((nq, m, d))
            A = np.zeros((m, d))
            J[:, 0, :] = X - mesh.element_centroid[kp]
            A[0] = n
            lam = _p1_values_at(mesh, grads, kp, X)
            gn = grads[kp] @ n
            for i in range(d + 1):
                for c in range(d):
                    J[:, 1 + i * d + c, c] = lam[:, i]
                    A[1 + i * d + c, c] = gn[i]
            Jint = me * np.einsum("q,qid->id", w, J)
            C = A @ Jint.T
            pen = me * np.einsum("qid,qjd,q->ij", J, J, w)
            M = -C - C.T + (rho / he) * pen
        else:
            km = mesh.facet_minus[fid]
            jp = _opposite_local_index(mesh, kp, fid)
            jm = _opposite_local_index(mesh, km, fid)
            shared = mesh.facet_vertices[fid]
            opp_p = mesh.elements[kp, jp]
            opp_m = mesh.elements[km, jm]
            verts = np.concatenate([shared, [opp_p, opp_m]])
            dofs = np.concatenate([[kp, km], cdofs[verts].ravel()])
            m = dofs.size
            # continuous bases are single-valued across the facet: only the
            # enrichment modes jump
            J = np.zeros((nq, 2, d))
            J[:, 0, :] = X - mesh.element_centroid[kp]
            J[:, 1, :] = -(X - mesh.element_centroid[km])
            A = np.zeros((m, d))
            A[0] = 0.5 * n
            A[1] = 0.5 * n
            gn_p = grads[kp] @ n
            gn_m = grads[km] @ n
            avg_gn = np.zeros(verts.size)
            loc_p = {v: i for i, v in enumerate(mesh.elements[kp])}
            loc_m = {v: i for i, v in enumerate(mesh.elements[km])}
            for i, v in enumerate(verts):
                s = 0.0
                if v in loc_p:
                    s += gn_p[loc_p[v]]
                if v in loc_m:
                    s += gn_m[loc_m[v]]
                avg_gn[i] = 0.5 * s
            for i in range(verts.size):
                for c in range(d):
                    A[2 + i * d + c, c] = avg_gn[i]
            Jint = me * np.einsum("q,qid->id", w, J)
            C = A @ Jint.T  # (m, 2)
            pen = me * np.einsum("qid,qjd,q->ij", J, J, w)
            M = np.zeros((m, m))
            M[:, :2] -= C
            M[:2, :] -= C.T
            M[:2, :2] += (rho / he) * pen

        rows.append(np.repeat(dofs, m))
        cols.append(np.tile(dofs, m))
        vals.append(M.ravel())

    A_u = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(layout.n_velocity, layout.n_velocity)).tocsr()
    A_u.sum_duplicates()
    A_u.sort_indices()
    # assemble at unit viscosity and scale once, so A_u(nu) = nu * A_u(1)
    # holds exactly in floating point
    if nu != 1.0:
        A_u = A_u * nu
    return A_u


def split_velocity_blocks(A_u, layout):
    ne = layout.n_enrichment
    return (A_u[:ne, :ne].tocsr(), A_u[:ne, ne:].tocsr(),
            A_u[ne:, :ne].tocsr(), A_u[ne:, ne:].tocsr())


def assemble_a(mesh, layout, nu, rho):
    """Blocks (A_DD, A_DC, A_CD, A_CC) of the IPDG velocity form."""
    if nu <= 0 or rho <= 0:
        raise ValueError("nu and rho must be positive")
    return split_velocity_blocks(assemble_velocity_matrix(mesh, layout, nu, rho), layout)


def _b_matrix(mesh, layout):
    """Matrix of b(w, q) with pressure rows and velocity columns."""
    d = mesh.dim
    grads = p1_gradients(mesh)
    vol = mesh.element_volume
    ne, nv = mesh.n_elements, mesh.n_vertices
    cdofs = layout.continuous_dofs_of_vertices(np.arange(nv)).reshape(nv, d)
    elem_cdofs = cdofs[mesh.elements]
    rows, cols, vals = [], [], []

    # volume term (div w, q): enrichment divergence is d, P1 divergence is
    # the component derivative of the vertex basis
    edof = np.arange(ne)
    rows.append(edof); cols.append(edof); vals.append(d * vol)
    for c in range(d):
        dof = elem_cdofs[:, :, c]
        r = np.repeat(edof[:, None], d + 1, axis=1)
        rows.append(r.ravel()); cols.append(dof.ravel())
        vals.append((vol[:, None] * grads[:, :, c]).ravel())

    rule = quadrature_rule(d - 1, 2)
    w = rule.weights
    for fid in range(mesh.n_facets):
        kp = mesh.facet_plus[fid]
        n = mesh.facet_normal[fid]
        me = mesh.facet_measure[fid]
        X = _facet_quad_points(mesh, fid, rule)
        Fp = me * (w @ ((X - mesh.element_centroid[kp]) @ n))
        if mesh.facet_boundary[fid]:
            # jump is the one-sided trace, average pressure is q on K+
            rows.append([kp]); cols.append([kp]); vals.append([-Fp])
            lam = _p1_values_at(mesh, grads, kp, X)
            lint = me * (w @ lam)  # (d+1,)
            for c in range(d):
                rows.append(np.full(d + 1, kp))
                cols.append(elem_cdofs[kp, :, c])
                vals.append(-n[c] * lint)
        else:
            km = mesh.facet_minus[fid]
            Fm = me * (w @ ((X - mesh.element_centroid[km]) @ n))
            rows.append([kp, km, kp, km])
            cols.append([kp, kp, km, km])
            vals.append([-0.5 * Fp, -0.5 * Fp, 0.5 * Fm, 0.5 * Fm])

    rows = np.concatenate([np.asarray(r, dtype=np.int64) for r in rows])
    cols = np.concatenate([np.asarray(c, dtype=np.int64) for c in cols])
    vals = np.concatenate([np.asarray(v, dtype=float) for v in vals])
    B = sp.coo_matrix((vals, (rows, cols)),
                      shape=(layout.n_pressure, layout.n_velocity)).tocsr()
    B.sum_duplicates()
    B.sort_indices()
    return B


def assemble_b(mesh, layout):
    """Coupling blocks (G_D, G_C) of the symmetric saddle layout, G = b^T."""
    G = _b_matrix(mesh, layout).T.tocsr()
    ne = layout.n_enrichment
    return G[:ne, :].tocsr(), G[ne:, :].tocsr()


def reconstruction_flux_matrix(mesh, layout):
    """Facet normal moments of the reconstructed enrichment part.

    Row e gives the flux integral(e) {v^D}.n_e ds as a function of the
    enrichment coefficients; boundary rows are zero.
    """
    rule = quadrature_rule(mesh.dim - 1, 2)
    w = rule.weights
    rows, cols, vals = [], [], []
    for fid in range(mesh.n_facets):
        if mesh.facet_boundary[fid]:
            continue
        kp = mesh.facet_plus[fid]
        km = mesh.facet_minus[fid]
        n = mesh.facet_normal[fid]
        me = mesh.facet_measure[fid]
        X = _facet_quad_points(mesh, fid, rule)
        rows += [fid, fid]
        cols += [kp, km]
        vals += [0.5 * me * (w @ ((X - mesh.element_centroid[kp]) @ n)),
                 0.5 * me * (w @ ((X - mesh.element_centroid[km]) @ n))]
    return sp.coo_matrix((vals, (rows, cols)),
                         shape=(mesh.n_facets, layout.n_enrichment)).tocsr()


def full_flux_matrix(mesh, layout):
    """Facet normal moments of the H(div) reconstruction of the whole
    velocity: average-trace moments on interior facets, zero on boundary
    facets. Used by the divergence-path assembly of the coupling form."""
    d = mesh.dim
    grads = p1_gradients(mesh)
    rule = quadrature_rule(d - 1, 2)
    w = rule.weights
    nv = mesh.n_vertices
    cdofs = layout.continuous_dofs_of_vertices(np.arange(nv)).reshape(nv, d)
    rows, cols, vals = [], [], []
    for fid in range(mesh.n_facets):
        if mesh.facet_boundary[fid]:
            continue
        kp = mesh.facet_plus[fid]
        km = mesh.facet_minus[fid]
        n = mesh.facet_normal[fid]
        me = mesh.facet_measure[fid]
        X = _facet_quad_points(mesh, fid, rule)
        rows += [fid, fid]
        cols += [kp, km]
        vals += [0.5 * me * (w @ ((X - mesh.element_centroid[kp]) @ n)),
                 0.5 * me * (w @ ((X - mesh.element_centroid[km]) @ n))]
        # continuous part is single-valued; only the facet vertices carry a
        # nonzero trace
        lam = _p1_values_at(mesh, grads, kp, X)
        lint = me * (w @ lam)
        loc = {v: i for i, v in enumerate(mesh.elements[kp])}
        for v in mesh.facet_vertices[fid]:
            for c in range(d):
                rows.append(fid)
                cols.append(cdofs[v, c])
                vals.append(n[c] * lint[loc[v]])
    return sp.coo_matrix((vals, (rows, cols)),
                         shape=(mesh.n_facets, layout.n_velocity)).tocsr()


def signed_incidence(mesh):
    """Element-facet incidence with outward-orientation signs, (ne, nf)."""
    rows, cols, vals = [], [], []
    for k in range(mesh.n_elements):
        for fid in mesh.element_facets[k]:
            rows.append(k)
            cols.append(fid)
            vals.append(float(mesh.facet_sign(k, fid)))
    return sp.coo_matrix((vals, (rows, cols)),
                         shape=(mesh.n_elements, mesh.n_facets)).tocsr()


def assemble_b_via_reconstruction(mesh, layout):
    """(G_D, G_C) assembled through the element-wise divergence of the
    H(div) reconstruction; must agree with :func:`assemble_b`."""
    B = signed_incidence(mesh) @ full_flux_matrix(mesh, layout)
    G = B.T.tocsr()
    ne = layout.n_enrichment
    return G[:ne, :].tocsr(), G[ne:, :].tocsr()


@dataclass
class ReconstructedField:
    """H(div)-conforming velocity: the continuous part untouched plus a
    lowest-order Raviart-Thomas image of the enrichment part, stored as
    one normal-flux coefficient per facet (shared by both neighbors)."""

    mesh: object
    layout: object
    continuous: np.ndarray      # (n_vertices, dim) nodal values
    facet_flux: np.ndarray      # (n_facets,) fluxes along the facet normals

    def rt_value(self, element, point):
        mesh = self.mesh
        d = mesh.dim
        out = np.zeros(d)
        volK = mesh.element_volume[element]
        for j in range(d + 1):
            fid = mesh.element_facets[element, j]
            a = mesh.vertices[mesh.elements[element, j]]
            sign = mesh.facet_sign(element, fid)
            out += self.facet_flux[fid] * sign * (np.asarray(point) - a) / (d * volK)
        return out

    def value(self, element, point):
        from .fe_space import eval_p1_basis
        lam, _ = eval_p1_basis(self.mesh, element, point)
        vc = lam @ self.continuous[self.mesh.elements[element]]
        return vc + self.rt_value(element, point)

    def divergence(self):
        """Element-wise (constant) divergence of the reconstructed field."""
        mesh = self.mesh
        grads = p1_gradients(mesh)
        nodal = self.continuous[mesh.elements]       # (ne, d+1, d)
        div_c = np.einsum("kic,kic->k", nodal, grads)
        net = np.zeros(mesh.n_elements)
        for j in range(mesh.dim + 1):
            fids = mesh.element_facets[:, j]
            sign = np.where(mesh.facet_plus[fids] == np.arange(mesh.n_elements),
                            1.0, -1.0)
            net += sign * self.facet_flux[fids]
        return div_c + net / mesh.element_volume


def reconstruct(mesh, layout, velocity_coeffs):
    velocity_coeffs = np.asarray(velocity_coeffs, dtype=float)
    if velocity_coeffs.shape != (layout.n_velocity,):
        raise ValueError("coefficient vector does not match layout")
    R = reconstruction_flux_matrix(mesh, layout)
    flux = R @ velocity_coeffs[: layout.n_enrichment]
    cont = velocity_coeffs[layout.n_enrichment:].reshape(layout.n_vertices, layout.dim)
    return ReconstructedField(mesh, layout, cont, flux)


def _element_quad_points(mesh, rule):
    """Physical quadrature points of every element, (ne, nq, d)."""
    return np.einsum("qi,kid->kqd", rule.points, mesh.vertices[mesh.elements])


def assemble_load(mesh, layout, f, mode="plain"):
    """Load vectors (f_D, f_C).

    ``plain`` integrates f against the enrichment modes directly;
    ``reconstructed`` integrates it against their Raviart-Thomas images,
    which spread over the facet neighbors. The continuous part is the
    same in both modes.
    """
    if mode not in ("plain", "reconstructed"):
        raise ValueError("mode must be 'plain' or 'reconstructed'")
    d = mesh.dim
    rule = quadrature_rule(d, LOAD_QUAD_DEGREE)
    w = rule.weights
    grads = p1_gradients(mesh)
    vol = mesh.element_volume
    X = _element_quad_points(mesh, rule)            # (ne, nq, d)
    F = f(X.reshape(-1, d)).reshape(mesh.n_elements, -1, d)

    # continuous load: vol * sum_q w_q f_c(X) lam_i(X)
    rel = X - mesh.element_centroid[:, None, :]
    lam = 1.0 / (d + 1) + np.einsum("kqd,kid->kqi", rel, grads)
    fc_local = np.einsum("q,kqc,kqi,k->kic", w, F, lam, vol)
    f_C = np.zeros(layout.n_continuous)
    cdofs = layout.continuous_dofs_of_vertices(np.arange(mesh.n_vertices)).reshape(
        mesh.n_vertices, d)
    np.add.at(f_C, cdofs[mesh.elements].ravel() - layout.n_enrichment,
              fc_local.ravel())

    if mode == "plain":
        f_D = np.einsum("q,kqc,kqc,k->k", w, F, rel, vol)
        return f_D, f_C

    # reconstructed mode: pair f with the RT basis tied to each facet and
    # push through the flux moments of the enrichment modes
    L = np.zeros(mesh.n_facets)
    for j in range(d + 1):
        fids = mesh.element_facets[:, j]
        a = mesh.vertices[mesh.elements[:, j]]          # opposite vertex
        sign = np.where(mesh.facet_plus[fids] == np.arange(mesh.n_elements),
                        1.0, -1.0)
        contrib = sign / d * np.einsum("q,kqc,kqc->k", w, F, X - a[:, None, :])
        np.add.at(L, fids, contrib)
    R = reconstruction_flux_matrix(mesh, layout)
    return R.T @ L, f_C


@dataclass
class BoundaryData:
    """Right-hand-side data for a Dirichlet trace g.

    ``momentum`` collects the consistent weak (Nitsche-type) terms on
    boundary facets; ``continuity`` the normal-trace term of the mass
    equation; the Dirichlet pairs drive strong elimination of the
    continuous boundary DoFs.
    """

    momentum: np.ndarray        # (n_velocity,)
    continuity: np.ndarray      # (n_pressure,)
    dirichlet_dofs: np.ndarray
    dirichlet_values: np.ndarray


def assemble_boundary_data(mesh, layout, g, nu, rho):
    d = mesh.dim
    grads = p1_gradients(mesh)
    momentum = np.zeros(layout.n_velocity)
    continuity = np.zeros(layout.n_pressure)

    bverts = np.nonzero(layout.boundary_vertex)[0]
    bdofs = layout.continuous_dofs_of_vertices(bverts)
    bvals = g(mesh.vertices[bverts]).ravel() if bverts.size else np.zeros(0)

    rule = quadrature_rule(d - 1, LOAD_QUAD_DEGREE)
    w = rule.weights
    cdofs = layout.continuous_dofs_of_vertices(np.arange(mesh.n_vertices)).reshape(
        mesh.n_vertices, d)
    for fid in np.nonzero(mesh.facet_boundary)[0]:
        kp = mesh.facet_plus[fid]
        n = mesh.facet_normal[fid]
        he = mesh.facet_h[fid]
        me = mesh.facet_measure[fid]
        X = _facet_quad_points(mesh, fid, rule)
        Gv = g(X)                                   # (nq, d)
        Gint = me * (w @ Gv)                        # integral of g

        continuity[kp] -= Gint @ n

        # enrichment test mode: trace x - x_K, normal gradient n
        rel = X - mesh.element_centroid[kp]
        momentum[kp] += nu * (-(n @ Gint)
                              + rho / he * me * (w @ np.einsum("qc,qc->q", Gv, rel)))
        # continuous test modes of the facet element
        lam = _p1_values_at(mesh, grads, kp, X)
        gn = grads[kp] @ n
        gl = me * np.einsum("q,qc,qi->ic", w, Gv, lam)
        for i in range(d + 1):
            dofs = cdofs[mesh.elements[kp, i]]
            momentum[dofs] += nu * (-gn[i] * Gint + rho / he * gl[i])

    return BoundaryData(momentum, continuity, bdofs, bvals)


def assemble_perturbed(A_DD):
    """Diagonal replacement of the enrichment-enrichment block."""
    return sp.diags(A_DD.diagonal()).tocsr()


def assemble_pressure_mass(mesh, layout):
    return sp.diags(mesh.element_volume).tocsr()


@dataclass
class BlockSystem:
    """All assembled blocks and right-hand sides of one discretization."""

    mesh: object
    layout: object
    nu: float
    rho: float
    A_DD: sp.csr_matrix = field(repr=False)
    A_DC: sp.csr_matrix = field(repr=False)
    A_CD: sp.csr_matrix = field(repr=False)
    A_CC: sp.csr_matrix = field(repr=False)
    G_D: sp.csr_matrix = field(repr=False)
    G_C: sp.csr_matrix = field(repr=False)
    M_p: sp.csr_matrix = field(repr=False)
    f_D_plain: np.ndarray = field(repr=False)
    f_C_plain: np.ndarray = field(repr=False)
    f_D_recon: np.ndarray = field(repr=False)
    f_C_recon: np.ndarray = field(repr=False)
    boundary: BoundaryData = field(repr=False)

    @property
    def g_P(self):
        return self.boundary.continuity

    def velocity_matrix(self, perturbed=False):
        dd = assemble_perturbed(self.A_DD) if perturbed else self.A_DD
        return sp.bmat([[dd, self.A_DC], [self.A_CD, self.A_CC]], format="csr")

    def coupling_matrix(self):
        return sp.vstack([self.G_D, self.G_C], format="csr")


def _zero_field(x):
    x = np.atleast_2d(x)
    return np.zeros_like(x)


def assemble_block_system(mesh, layout, f, g, nu, rho):
    """Assemble every block and both load modes for one problem setup.

    ``g`` may be None for homogeneous Dirichlet data.
    """
    A_u = assemble_velocity_matrix(mesh, layout, nu, rho)
    A_DD, A_DC, A_CD, A_CC = split_velocity_blocks(A_u, layout)
    G_D, G_C = assemble_b(mesh, layout)
    M_p = assemble_pressure_mass(mesh, layout)
    f_D_plain, f_C_plain = assemble_load(mesh, layout, f, "plain")
    f_D_recon, f_C_recon = assemble_load(mesh, layout, f, "reconstructed")
    boundary = assemble_boundary_data(mesh, layout, g if g is not None else _zero_field,
                                      nu, rho)
    return BlockSystem(mesh, layout, nu, rho, A_DD, A_DC, A_CD, A_CC,
                       G_D, G_C, M_p, f_D_plain, f_C_plain,
                       f_D_recon, f_C_recon, boundary)


def export_matrix_market(path, matrix):
    """Dump any assembled block for external inspection."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix))
