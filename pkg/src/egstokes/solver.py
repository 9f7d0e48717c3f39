"""Krylov solvers and block preconditioners for the saddle systems.

GMRES is flexible (stores preconditioned directions) and right
preconditioned, so its recurrence tracks the true unpreconditioned
residual; MINRES is the standard preconditioned recurrence and requires
an SPD preconditioner. Block preconditioners come in diagonal, lower and
upper triangular kinds, each with an exact (direct factorization) or
inexact (AMG / CG to 1e-6) velocity block.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import pyamg
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .system import finalize_solution

INNER_TOL = 1e-6

PRECOND_KINDS = ("diag", "lower", "upper")
FIDELITIES = ("exact", "inexact")


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    residual: float                      # final relative residual (recurrence)
    true_residual: float = np.nan        # recomputed ||b - Ax|| / ||b||
    residual_history: list = field(default_factory=list, repr=False)
    wall_time: float = 0.0
    inner_iterations: list = field(default_factory=list, repr=False)
    condition_number: float | None = None


def _as_matvec(A):
    if sp.issparse(A):
        return lambda x: A @ x
    if callable(A):
        return A
    A = np.asarray(A)
    return lambda x: A @ x


def gmres(A, b, M=None, rtol=1e-8, max_iter=500, restart=None):
    """Right-preconditioned flexible GMRES, full recurrence by default.

    ``M`` is an apply-callable (approximate inverse); the iteration stops
    when the unpreconditioned relative residual drops below ``rtol``.
    """
    matvec = _as_matvec(A)
    apply_M = M if M is not None else (lambda x: x)
    b = np.asarray(b, dtype=float)
    n = b.size
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, True, 0.0, 0.0)
    if restart is None:
        restart = max_iter

    t0 = time.perf_counter()
    x = np.zeros(n)
    history = []
    total_iters = 0
    converged = False

    while total_iters < max_iter and not converged:
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        if beta <= rtol * bnorm:
            converged = True
            break
        cycle = min(restart, max_iter - total_iters)
        V = np.empty((cycle + 1, n))
        Z = np.empty((cycle, n))
        H = np.zeros((cycle + 1, cycle))
        cs = np.zeros(cycle)
        sn = np.zeros(cycle)
        g = np.zeros(cycle + 1)
        V[0] = r / beta
        g[0] = beta
        j_used = 0
        for j in range(cycle):
            Z[j] = apply_M(V[j])
            w = matvec(Z[j])
            # modified Gram-Schmidt
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            hsub = np.linalg.norm(w)
            H[j + 1, j] = hsub
            if hsub > 0.0:
                V[j + 1] = w / hsub
            # apply stored Givens rotations, then the new one
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j] = H[j, j] / denom if denom else 1.0
            sn[j] = H[j + 1, j] / denom if denom else 0.0
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_used = j + 1
            total_iters += 1
            res = abs(g[j + 1])
            history.append(res / bnorm)
            if res <= rtol * bnorm or hsub == 0.0:
                converged = res <= rtol * bnorm
                break
        y = scipy.linalg.solve_triangular(H[:j_used, :j_used], g[:j_used])
        x = x + y @ Z[:j_used]

    true_res = np.linalg.norm(b - matvec(x)) / bnorm
    rep = SolveReport(total_iters, converged or true_res <= rtol,
                      history[-1] if history else 0.0, true_res, history,
                      time.perf_counter() - t0)
    return x, rep


def minres(A, b, M=None, rtol=1e-8, max_iter=500):
    """Preconditioned MINRES for symmetric A with SPD preconditioner M."""
    matvec = _as_matvec(A)
    apply_M = M if M is not None else (lambda x: x)
    b = np.asarray(b, dtype=float)
    n = b.size
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, True, 0.0, 0.0)

    t0 = time.perf_counter()
    x = np.zeros(n)
    r1 = b.copy()
    y = apply_M(r1)
    beta1 = r1 @ y
    if beta1 < 0.0:
        raise ValueError("preconditioner is not positive definite")
    beta1 = np.sqrt(beta1)
    history = []

    oldb, beta = 0.0, beta1
    dbar = epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1
    converged = False
    itn = 0

    while itn < max_iter:
        itn += 1
        s = 1.0 / beta
        v = s * y
        y = matvec(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = v @ y
        y = y - (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = apply_M(r2)
        oldb = beta
        beta = r2 @ y
        if beta < 0.0:
            raise ValueError("preconditioner is not positive definite")
        beta = np.sqrt(beta)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), np.finfo(float).eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        history.append(phibar / beta1)
        if phibar <= rtol * beta1:
            converged = True
            break

    true_res = np.linalg.norm(b - matvec(x)) / bnorm
    rep = SolveReport(itn, converged, history[-1] if history else 0.0,
                      true_res, history, time.perf_counter() - t0)
    return x, rep


def _check_spd_layout(A):
    diff = abs(A - A.T)
    if diff.nnz and diff.max() > 1e-10 * abs(A).max():
        raise ValueError("velocity block is not symmetric")
    if np.any(A.diagonal() <= 0.0):
        raise ValueError("velocity block has a nonpositive diagonal")


def inner_velocity_solver(fidelity, matrix, counter=None):
    """Solver handle for the SPD velocity block.

    exact: sparse LU; inexact: smoothed-aggregation AMG preconditioned CG
    to 1e-6 relative, with per-application iteration counts appended to
    ``counter`` when given.
    """
    matrix = matrix.tocsr()
    _check_spd_layout(matrix)
    if fidelity == "exact":
        lu = spla.splu(matrix.tocsc())
        return lambda r: lu.solve(r)
    if fidelity != "inexact":
        raise ValueError(f"unknown fidelity: {fidelity}")
    ml = pyamg.smoothed_aggregation_solver(matrix, max_coarse=50)
    P = ml.aspreconditioner(cycle="V")

    def solve(r):
        it = [0]

        def cb(_):
            it[0] += 1

        y, info = spla.cg(matrix, r, rtol=INNER_TOL, atol=0.0, M=P,
                          maxiter=200, callback=cb)
        if counter is not None:
            counter.append(it[0])
        return y

    return solve


def _pressure_solver(fidelity, system, counter=None):
    nu = system.nu
    if not system.condensed:
        md = system.M_p.diagonal()
        return lambda r: nu * (r / md)
    S = (system.M_p * (1.0 / nu) + system.A_p_E).tocsr()
    if fidelity == "exact":
        lu = spla.splu(S.tocsc())
        return lambda r: lu.solve(r)
    dinv = 1.0 / S.diagonal()

    def solve(r):
        it = [0]

        def cb(_):
            it[0] += 1

        y, info = spla.cg(S, r, rtol=INNER_TOL, atol=0.0,
                          M=spla.LinearOperator(S.shape, lambda v: dinv * v),
                          maxiter=500, callback=cb)
        if counter is not None:
            counter.append(it[0])
        return y

    return solve


class BlockPreconditioner:
    """Diagonal or triangular block approximate inverse of one system."""

    def __init__(self, kind, fidelity, system):
        if kind not in PRECOND_KINDS:
            raise ValueError(f"unknown preconditioner kind: {kind}")
        if fidelity not in FIDELITIES:
            raise ValueError(f"unknown fidelity: {fidelity}")
        self.kind = kind
        self.fidelity = fidelity
        self.variant = {"st": "full", "pr": "full",
                        "ppr": "perturbed", "cpr": "condensed"}[system.variant]
        self.n_u = system.n_u
        self.G = system.G
        self.inner_iterations = []
        self.velocity_solve = inner_velocity_solver(
            fidelity, system.A, self.inner_iterations)
        self.pressure_solve = _pressure_solver(fidelity, system,
                                               self.inner_iterations)

    def apply(self, r):
        r_u, r_p = r[: self.n_u], r[self.n_u:]
        if self.kind == "diag":
            y_u = self.velocity_solve(r_u)
            y_p = self.pressure_solve(r_p)
        elif self.kind == "lower":
            y_u = self.velocity_solve(r_u)
            y_p = self.pressure_solve(r_p - self.G.T @ y_u)
        else:
            y_p = self.pressure_solve(r_p)
            y_u = self.velocity_solve(r_u - self.G @ y_p)
        return np.concatenate([y_u, y_p])

    __call__ = apply


def build_preconditioner(kind, fidelity, system):
    return BlockPreconditioner(kind, fidelity, system)


def solve_krylov(system, kind="diag", fidelity="exact", method=None,
                 rtol=1e-8, max_iter=500):
    """Solve one system iteratively and recover the physical solution.

    The singular-compatible saddle system is solved as-is; the pressure
    gauge is fixed by post-projection inside ``finalize_solution``. GMRES
    is the default; MINRES is only admissible with the diagonal kind.
    """
    if method is None:
        method = "gmres"
    K = system.saddle_matrix()
    B = build_preconditioner(kind, fidelity, system)
    if method == "gmres":
        x, rep = gmres(K, system.rhs, M=B, rtol=rtol, max_iter=max_iter)
    elif method == "minres":
        if kind != "diag":
            raise ValueError("MINRES needs the SPD diagonal preconditioner")
        x, rep = minres(K, system.rhs, M=B, rtol=rtol, max_iter=max_iter)
    else:
        raise ValueError(f"unknown method: {method}")
    rep.inner_iterations = list(B.inner_iterations)
    return finalize_solution(system, x), rep


def condition_number(system, dense_limit=6000):
    """Spectral condition number of the block-diagonal preconditioned
    saddle matrix, excluding the single pressure-gauge zero mode."""
    K = system.saddle_matrix()
    n = K.shape[0]
    if n > dense_limit:
        raise ValueError(f"system size {n} exceeds dense limit {dense_limit}")
    if system.condensed:
        P = system.M_p * (1.0 / system.nu) + system.A_p_E
    else:
        P = system.M_p * (1.0 / system.nu)
    Binv = sp.block_diag([system.A, P]).toarray()
    lam = scipy.linalg.eigh(K.toarray(), Binv, eigvals_only=True)
    lam = np.abs(lam)
    lam = np.sort(lam)[1:]          # drop the gauge mode
    return lam[-1] / lam[0]
