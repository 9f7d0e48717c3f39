import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from egstokes.assembly import (assemble_a, assemble_b,
                               assemble_b_via_reconstruction,
                               assemble_block_system, assemble_boundary_data,
                               assemble_load, assemble_perturbed,
                               assemble_pressure_mass,
                               assemble_velocity_matrix, export_matrix_market,
                               reconstruct, reconstruction_flux_matrix)
from egstokes.fe_space import build_dof_layout
from egstokes.mesh import build_unit_cube_mesh, build_unit_square_mesh

from oracles import dense_a_oracle, dense_b_oracle


def _setup(builder, n):
    mesh = builder(n)
    return mesh, build_dof_layout(mesh)


@pytest.mark.parametrize("builder,n", [(build_unit_square_mesh, 2),
                                       (build_unit_cube_mesh, 1)])
def test_velocity_matrix_matches_dense_oracle(builder, n):
    mesh, layout = _setup(builder, n)
    nu, rho = 0.7, 3.0
    A = assemble_velocity_matrix(mesh, layout, nu, rho).toarray()
    ref = dense_a_oracle(mesh, layout, nu, rho)
    assert np.max(np.abs(A - ref)) < 1e-13 * np.max(np.abs(ref))


@pytest.mark.parametrize("builder,n", [(build_unit_square_mesh, 2),
                                       (build_unit_cube_mesh, 1)])
def test_coupling_matrix_matches_dense_oracle(builder, n):
    mesh, layout = _setup(builder, n)
    G_D, G_C = assemble_b(mesh, layout)
    G = sp.vstack([G_D, G_C]).toarray()
    ref = dense_b_oracle(mesh, layout).T
    assert np.max(np.abs(G - ref)) < 1e-13


def test_velocity_matrix_symmetric():
    for mesh, layout in (_setup(build_unit_square_mesh, 4),
                         _setup(build_unit_cube_mesh, 2)):
        A = assemble_velocity_matrix(mesh, layout, 1.0, 5.0)
        diff = abs(A - A.T)
        assert diff.max() < 1e-13


def test_velocity_matrix_viscosity_scaling_exact():
    mesh, layout = _setup(build_unit_square_mesh, 3)
    A1 = assemble_velocity_matrix(mesh, layout, 1.0, 10.0)
    A2 = assemble_velocity_matrix(mesh, layout, 1e-6, 10.0)
    assert (A2 != A1 * 1e-6).nnz == 0


def test_assemble_a_validates_parameters():
    mesh, layout = _setup(build_unit_square_mesh, 2)
    with pytest.raises(ValueError):
        assemble_a(mesh, layout, -1.0, 10.0)
    with pytest.raises(ValueError):
        assemble_a(mesh, layout, 1.0, 0.0)


def test_continuous_subspace_reduces_to_conforming_form():
    # continuous P1 fields vanishing on the boundary have no jumps at
    # all: the facet terms drop and the form reduces to the plain
    # broken-gradient inner product
    mesh, layout = _setup(build_unit_square_mesh, 3)
    ne = layout.n_enrichment
    A = assemble_velocity_matrix(mesh, layout, 1.0, 10.0)
    bdofs = layout.boundary_velocity_dofs()
    rng = np.random.default_rng(0)
    for _ in range(3):
        v = np.zeros(layout.n_velocity)
        w = np.zeros(layout.n_velocity)
        v[ne:] = rng.standard_normal(layout.n_continuous)
        w[ne:] = rng.standard_normal(layout.n_continuous)
        v[bdofs] = 0.0
        w[bdofs] = 0.0
        # gradient inner product by direct summation
        from egstokes.fe_space import p1_gradients
        grads = p1_gradients(mesh)
        vn = v[ne:].reshape(-1, 2)[mesh.elements]
        wn = w[ne:].reshape(-1, 2)[mesh.elements]
        gv = np.einsum("kic,kid->kcd", vn, grads)
        gw = np.einsum("kic,kid->kcd", wn, grads)
        exact = np.einsum("kcd,kcd,k->", gv, gw, mesh.element_volume)
        assert abs(v @ (A @ w) - exact) < 1e-12 * max(1.0, abs(exact))


@pytest.mark.parametrize("rho", [2.0, 10.0])
def test_velocity_matrix_spd_on_constrained_space(rho):
    # eliminate the continuous boundary DoFs; the rest must be SPD
    mesh, layout = _setup(build_unit_square_mesh, 4)
    A = assemble_velocity_matrix(mesh, layout, 1.0, rho)
    bdofs = layout.boundary_velocity_dofs()
    keep = np.setdiff1d(np.arange(layout.n_velocity), bdofs)
    Ak = A[np.ix_(keep, keep)].toarray()
    lam = np.linalg.eigvalsh(Ak)
    assert lam.min() > 0.0


@pytest.mark.parametrize("builder,n", [(build_unit_square_mesh, 2),
                                       (build_unit_square_mesh, 8),
                                       (build_unit_cube_mesh, 2),
                                       (build_unit_cube_mesh, 4)])
def test_b_form_equivalence_via_reconstruction(builder, n):
    mesh, layout = _setup(builder, n)
    G_D, G_C = assemble_b(mesh, layout)
    H_D, H_C = assemble_b_via_reconstruction(mesh, layout)
    assert abs(G_D - H_D).max() < 1e-12
    assert abs(G_C - H_C).max() < 1e-12


def test_coupling_annihilates_constant_pressure():
    for mesh, layout in (_setup(build_unit_square_mesh, 4),
                         _setup(build_unit_cube_mesh, 2)):
        G_D, G_C = assemble_b(mesh, layout)
        ones = np.ones(layout.n_pressure)
        assert np.max(np.abs(G_D @ ones)) < 1e-13
        assert np.max(np.abs(G_C @ ones)) < 1e-13


def test_reconstruction_passthrough_and_divergence():
    # a continuous, divergence-free linear field reconstructs to itself
    mesh, layout = _setup(build_unit_square_mesh, 3)
    coeffs = np.zeros(layout.n_velocity)
    nodal = np.column_stack([mesh.vertices[:, 1], mesh.vertices[:, 0]])
    coeffs[layout.n_enrichment:] = nodal.ravel()
    field = reconstruct(mesh, layout, coeffs)
    assert np.max(np.abs(field.facet_flux)) == 0.0
    assert np.max(np.abs(field.divergence())) < 1e-13
    pt = mesh.element_centroid[2]
    assert np.allclose(field.value(2, pt), pt[::-1], atol=1e-13)


def test_reconstruction_flux_is_average_normal_moment():
    mesh, layout = _setup(build_unit_square_mesh, 2)
    R = reconstruction_flux_matrix(mesh, layout)
    assert R.shape == (mesh.n_facets, layout.n_enrichment)
    boundary_rows = np.nonzero(mesh.facet_boundary)[0]
    assert abs(R[boundary_rows, :]).max() == 0.0


def test_reconstruction_divergence_identity():
    # elementwise: div(Rv) = div(v^C) + net enrichment flux / |K|;
    # integral over the domain of div(Rv) for v with zero boundary flux is 0
    mesh, layout = _setup(build_unit_square_mesh, 3)
    rng = np.random.default_rng(1)
    coeffs = rng.standard_normal(layout.n_velocity)
    bdofs = layout.boundary_velocity_dofs()
    coeffs[bdofs] = 0.0
    field = reconstruct(mesh, layout, coeffs)
    total = mesh.element_volume @ field.divergence()
    assert abs(total) < 1e-12


def test_load_modes_share_continuous_part():
    mesh, layout = _setup(build_unit_square_mesh, 3)

    def f(X):
        return np.column_stack([np.sin(X[:, 0]), X[:, 1] ** 2])

    fD_p, fC_p = assemble_load(mesh, layout, f, "plain")
    fD_r, fC_r = assemble_load(mesh, layout, f, "reconstructed")
    assert np.allclose(fC_p, fC_r, atol=1e-14)
    assert not np.allclose(fD_p, fD_r)
    with pytest.raises(ValueError):
        assemble_load(mesh, layout, f, "exotic")


def test_load_modes_agree_for_gradient_free_forcing():
    # for f with zero divergence-free-complement... use f = const: both
    # modes integrate a mean-zero test mode, so the enrichment load is 0
    mesh, layout = _setup(build_unit_square_mesh, 3)

    def f(X):
        return np.tile([2.0, -1.0], (X.shape[0], 1))

    fD_p, fC_p = assemble_load(mesh, layout, f, "plain")
    fD_r, fC_r = assemble_load(mesh, layout, f, "reconstructed")
    assert np.max(np.abs(fD_p)) < 1e-14
    # interior RT modes have mean-zero divergence against constants too
    assert np.allclose(fC_p, fC_r, atol=1e-14)


def test_plain_load_against_quadrature_oracle():
    mesh, layout = _setup(build_unit_square_mesh, 2)

    def f(X):
        return np.column_stack([X[:, 0] * X[:, 1], X[:, 0] ** 2])

    fD, fC = assemble_load(mesh, layout, f, "plain")
    from egstokes.fe_space import quadrature_rule
    from oracles import velocity_basis
    rule = quadrature_rule(2, 5)
    ref = np.zeros(layout.n_velocity)
    for k in range(mesh.n_elements):
        X = rule.points @ mesh.vertices[mesh.elements[k]]
        F = f(X)
        dofs = np.concatenate([[k],
                               layout.continuous_dofs_of_vertices(mesh.elements[k])])
        for dof in dofs:
            acc = 0.0
            for q, wq in enumerate(rule.weights):
                val, _ = velocity_basis(mesh, layout, dof, k, X[q])
                acc += wq * (F[q] @ val)
            ref[dof] += mesh.element_volume[k] * acc
    assert np.allclose(np.concatenate([fD, fC]), ref, atol=1e-13)


def test_boundary_data_zero_for_homogeneous_trace():
    mesh, layout = _setup(build_unit_square_mesh, 3)

    def g(X):
        return np.zeros_like(np.atleast_2d(X))

    bd = assemble_boundary_data(mesh, layout, g, 1.0, 10.0)
    assert np.max(np.abs(bd.momentum)) == 0.0
    assert np.max(np.abs(bd.continuity)) == 0.0
    assert np.max(np.abs(bd.dirichlet_values)) == 0.0
    assert np.array_equal(bd.dirichlet_dofs, layout.boundary_velocity_dofs())


def test_boundary_continuity_compatibility():
    # sum over pressure DoFs of the continuity correction equals the
    # negative total boundary flux of g
    mesh, layout = _setup(build_unit_square_mesh, 3)

    def g(X):
        X = np.atleast_2d(X)
        return np.column_stack([X[:, 0], -X[:, 1]])

    bd = assemble_boundary_data(mesh, layout, g, 1.0, 10.0)
    total_flux = 0.0
    from egstokes.fe_space import quadrature_rule
    rule = quadrature_rule(1, 5)
    for fid in np.nonzero(mesh.facet_boundary)[0]:
        X = rule.points @ mesh.vertices[mesh.facet_vertices[fid]]
        total_flux += mesh.facet_measure[fid] * (
            rule.weights @ (g(X) @ mesh.facet_normal[fid]))
    assert np.isclose(bd.continuity.sum(), -total_flux, atol=1e-13)


def test_perturbed_block_is_diagonal_of_add():
    mesh, layout = _setup(build_unit_square_mesh, 3)
    A_DD, _, _, _ = assemble_a(mesh, layout, 1.0, 10.0)
    D = assemble_perturbed(A_DD)
    assert np.allclose(D.diagonal(), A_DD.diagonal())
    assert D.nnz == layout.n_enrichment


def test_pressure_mass_is_element_volumes():
    mesh, layout = _setup(build_unit_cube_mesh, 2)
    M = assemble_pressure_mass(mesh, layout)
    assert np.allclose(M.diagonal(), mesh.element_volume)


def test_block_system_shapes_and_rhs():
    mesh, layout = _setup(build_unit_square_mesh, 2)

    def f(X):
        return np.column_stack([X[:, 1], X[:, 0]])

    bs = assemble_block_system(mesh, layout, f, None, 1e-3, 10.0)
    ne = layout.n_enrichment
    assert bs.A_DD.shape == (ne, ne)
    assert bs.A_CC.shape == (layout.n_continuous, layout.n_continuous)
    assert bs.G_D.shape == (ne, layout.n_pressure)
    assert bs.velocity_matrix().shape == (layout.n_velocity, layout.n_velocity)
    assert bs.coupling_matrix().shape == (layout.n_velocity, layout.n_pressure)
    assert np.max(np.abs(bs.g_P)) == 0.0  # homogeneous data


def test_export_matrix_market(tmp_path):
    mesh, layout = _setup(build_unit_square_mesh, 2)
    A = assemble_velocity_matrix(mesh, layout, 1.0, 10.0)
    path = tmp_path / "a.mtx"
    export_matrix_market(path, A)
    import scipy.io
    back = scipy.io.mmread(str(path))
    assert abs(back.tocsr() - A).max() < 1e-15
