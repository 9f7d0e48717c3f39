import numpy as np
import pytest

from egstokes.problems import PROBLEM_IDS, get_problem


def _fd_gradient(func, X, eps=1e-6):
    d = X.shape[1]
    out = []
    for c in range(d):
        dp = np.zeros(d)
        dp[c] = eps
        out.append((func(X + dp) - func(X - dp)) / (2 * eps))
    return np.stack(out, axis=-1)


def _interior_points(dim, n=40, seed=3):
    rng = np.random.default_rng(seed)
    return 0.1 + 0.8 * rng.random((n, dim))


def test_get_problem_validates_id():
    with pytest.raises(ValueError):
        get_problem("channel", 1.0)


@pytest.mark.parametrize("pid", PROBLEM_IDS)
def test_velocity_divergence_free(pid):
    prob = get_problem(pid, 1.0)
    X = _interior_points(prob.dim)
    G = prob.grad_u(X)
    div = np.trace(G, axis1=1, axis2=2)
    assert np.allclose(div, 0.0, atol=1e-12)


@pytest.mark.parametrize("pid", PROBLEM_IDS)
def test_grad_u_matches_finite_differences(pid):
    prob = get_problem(pid, 1.0)
    X = _interior_points(prob.dim, n=15)
    G = prob.grad_u(X)
    fd = _fd_gradient(prob.u, X)
    assert np.allclose(G, fd, atol=1e-7)


def test_vortex2d_homogeneous_boundary_trace():
    prob = get_problem("vortex2d", 1.0)
    rng = np.random.default_rng(11)
    pts = rng.random((30, 2))
    for c in range(2):
        for val in (0.0, 1.0):
            X = pts.copy()
            X[:, c] = val
            assert np.allclose(prob.u(X), 0.0, atol=1e-13)
            assert np.allclose(prob.g(X), 0.0, atol=1e-13)
    assert prob.homogeneous_bc


@pytest.mark.parametrize("pid", ["cube3d", "lshape3d"])
def test_boundary_trace_is_velocity(pid):
    prob = get_problem(pid, 1.0)
    rng = np.random.default_rng(11)
    X = rng.random((20, 3))
    X[:, 0] = 0.0
    assert np.allclose(prob.g(X), prob.u(X), atol=1e-14)
    assert not prob.homogeneous_bc


@pytest.mark.parametrize("nu", [1.0, 1e-3, 1e-6])
@pytest.mark.parametrize("pid", ["vortex2d", "cube3d"])
def test_forcing_consistent_with_momentum_equation(pid, nu):
    # f = -nu*laplace(u) + grad(p), checked by finite differences
    prob = get_problem(pid, nu)
    d = prob.dim
    X = _interior_points(d, n=10, seed=5)
    eps = 1e-4
    lap = np.zeros((X.shape[0], d))
    for c in range(d):
        dp = np.zeros(d)
        dp[c] = eps
        lap += (prob.u(X + dp) - 2 * prob.u(X) + prob.u(X - dp)) / eps ** 2
    grad_p = _fd_gradient(prob.p, X)
    f_expect = -nu * lap + grad_p
    assert np.allclose(prob.f(X), f_expect, rtol=1e-4, atol=1e-5 * max(nu, 1e-6))


def test_cube3d_cyclic_symmetry():
    prob = get_problem("cube3d", 1.0)
    X = _interior_points(3, n=25, seed=9)
    Xs = X[:, [1, 2, 0]]
    s = prob.u(X).sum(axis=1)
    ss = prob.u(Xs).sum(axis=1)
    assert np.allclose(s, ss, atol=1e-12)


def test_lshape3d_pressure_kink():
    prob = get_problem("lshape3d", 1.0)
    X = _interior_points(3, n=20, seed=13)
    assert np.allclose(prob.p(X), np.abs(2 * X[:, 0] - 1.0), atol=1e-13)
    # the forcing uses the one-sided derivative of |2x-1|
    left = X.copy()
    left[:, 0] = 0.25
    right = X.copy()
    right[:, 0] = 0.75
    nu = prob.nu
    eps = 1e-4
    for pts, slope in ((left, -2.0), (right, 2.0)):
        lap = np.zeros((pts.shape[0], 3))
        for c in range(3):
            dp = np.zeros(3)
            dp[c] = eps
            lap += (prob.u(pts + dp) - 2 * prob.u(pts) + prob.u(pts - dp)) / eps ** 2
        f = prob.f(pts)
        assert np.allclose(f[:, 0], -nu * lap[:, 0] + slope, rtol=1e-3, atol=1e-6)


def test_rho_defaults():
    assert get_problem("vortex2d", 1.0).rho_default == 10.0
    assert get_problem("cube3d", 1.0).rho_default == 2.0
    assert get_problem("lshape3d", 1.0).rho_default == 2.0


@pytest.mark.parametrize("pid,n", [("vortex2d", 3), ("cube3d", 2),
                                   ("lshape3d", 2)])
def test_mesh_builders_attached(pid, n):
    prob = get_problem(pid, 1.0)
    mesh = prob.build_mesh(n)
    assert mesh.dim == prob.dim
