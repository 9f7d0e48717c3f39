"""Command-line experiment driver.

``eg-stokes run`` executes one of four studies:

convergence  mesh refinement table: errors and empirical rates per method
robustness   viscosity sweep at a fixed mesh: errors per method and nu
precond      Krylov iteration counts per preconditioner kind, plus the
             condition numbers of the diagonally preconditioned systems
             when a dense eigensolve is feasible
sparsity     DoF and nonzero statistics of the method operators

Every study writes a CSV record set to ``--out`` and prints an aligned
text table. Non-converged Krylov runs are rendered as ``--``.
"""

from __future__ import annotations

import csv
import sys

import click
import numpy as np

from .analysis import compute_error_report, eoc, mesh_size
from .assembly import assemble_block_system, reconstruct
from .fe_space import build_dof_layout
from .mesh import write_vtk
from .problems import PROBLEM_IDS, get_problem
from .solver import PRECOND_KINDS, condition_number, solve_krylov
from .system import VARIANT_LABELS, VARIANTS, build_system, solve_direct

DEFAULT_NS = {"convergence": "4,8,16,32,64", "robustness": "32",
              "precond": "4", "sparsity": "16"}
DEFAULT_NUS = {"robustness": "1e-2,1e-3,1e-4,1e-5,1e-6",
               "precond": "1,1e-2,1e-4,1e-6"}
MAX_N = {"default2d": 64, "default3d": 16, "extended3d": 32}
CONDITION_DENSE_LIMIT = 6000


def _fmt(x):
    """Scientific notation with 4 significant digits, '--' for missing."""
    if x is None:
        return "--"
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if not np.isfinite(x):
        return "--"
    return f"{x:.3e}"


def _parse_list(text, cast):
    return [cast(tok) for tok in str(text).split(",") if tok.strip()]


def _read_config(path):
    """Parse a key=value config file; '#' starts a comment."""
    values = {}
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise click.BadParameter(f"malformed config line: {line!r}")
            key, val = line.split("=", 1)
            values[key.strip().replace("-", "_")] = val.strip().strip("'\"")
    return values


def print_table(headers, rows, stream=None):
    """Render an aligned text table."""
    stream = stream or sys.stdout
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    for k, row in enumerate(cells):
        line = "  ".join(c.rjust(w) for c, w in zip(row, widths))
        stream.write(line + "\n")
        if k == 0:
            stream.write("  ".join("-" * w for w in widths) + "\n")


def write_csv(path, headers, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(headers)
        for row in rows:
            writer.writerow([_fmt(c) if isinstance(c, float) else c for c in row])


def _solve_case(problem, n, variant, rho):
    mesh = problem.build_mesh(n)
    layout = build_dof_layout(mesh)
    blocks = assemble_block_system(mesh, layout, problem.f, problem.g,
                                   problem.nu, rho)
    system = build_system(variant, blocks)
    solution = solve_direct(system)
    return mesh, layout, system, solution


def run_convergence(cfg):
    headers = ["method", "n", "h", "vel_energy", "eoc_u",
               "p_l2", "eoc_p", "p_aux", "eoc_aux", "max_div"]
    rows = []
    for variant in cfg["methods"]:
        errs_u, errs_p, errs_aux, hs = [], [], [], []
        for n in cfg["ns"]:
            problem = get_problem(cfg["problem"], cfg["nus"][0])
            rho = cfg["rho"] if cfg["rho"] is not None else problem.rho_default
            mesh, layout, system, solution = _solve_case(problem, n, variant, rho)
            rep = compute_error_report(problem, mesh, layout, solution, rho)
            hs.append(rep.h)
            errs_u.append(rep.velocity_energy)
            errs_p.append(rep.pressure_l2)
            errs_aux.append(rep.pressure_aux)
            k = len(hs) - 1
            rate = lambda es: (None if k == 0 else
                               eoc(es[k - 1:k + 1], hs[k - 1:k + 1])[0])
            rows.append([VARIANT_LABELS[variant], n, _fmt(rep.h),
                         _fmt(rep.velocity_energy), _fmt(rate(errs_u)),
                         _fmt(rep.pressure_l2), _fmt(rate(errs_p)),
                         _fmt(rep.pressure_aux), _fmt(rate(errs_aux)),
                         _fmt(rep.max_divergence)])
    return headers, rows


def run_robustness(cfg):
    headers = ["method", "nu", "h", "vel_energy", "p_l2", "p_aux", "max_div"]
    n = cfg["ns"][0]
    rows = []
    for variant in cfg["methods"]:
        for nu in cfg["nus"]:
            problem = get_problem(cfg["problem"], nu)
            rho = cfg["rho"] if cfg["rho"] is not None else problem.rho_default
            mesh, layout, system, solution = _solve_case(problem, n, variant, rho)
            rep = compute_error_report(problem, mesh, layout, solution, rho)
            rows.append([VARIANT_LABELS[variant], _fmt(nu), _fmt(rep.h),
                         _fmt(rep.velocity_energy), _fmt(rep.pressure_l2),
                         _fmt(rep.pressure_aux), _fmt(rep.max_divergence)])
    return headers, rows


def run_precond(cfg):
    n = cfg["ns"][0]
    methods = [m for m in cfg["methods"] if m != "st"] or ["pr"]
    kinds = cfg["kinds"]
    headers = ["nu"] + [f"{m}_{k}" for m in methods for k in kinds]
    rows = []
    for nu in cfg["nus"]:
        problem = get_problem(cfg["problem"], nu)
        rho = cfg["rho"] if cfg["rho"] is not None else problem.rho_default
        mesh = problem.build_mesh(n)
        layout = build_dof_layout(mesh)
        blocks = assemble_block_system(mesh, layout, problem.f, problem.g,
                                       nu, rho)
        row = [_fmt(nu)]
        for variant in methods:
            system = build_system(variant, blocks)
            for kind in kinds:
                _, rep = solve_krylov(system, kind=kind,
                                      fidelity=cfg["fidelity"],
                                      rtol=cfg["tol"],
                                      max_iter=cfg["max_iter"])
                row.append(str(rep.iterations) if rep.converged else "--")
        rows.append(row)

    # condition numbers of the diagonally preconditioned operators,
    # constant in nu, computed once at the first viscosity
    kappa_rows = []
    problem = get_problem(cfg["problem"], cfg["nus"][0])
    rho = cfg["rho"] if cfg["rho"] is not None else problem.rho_default
    mesh = problem.build_mesh(n)
    layout = build_dof_layout(mesh)
    if layout.n_total <= CONDITION_DENSE_LIMIT:
        blocks = assemble_block_system(mesh, layout, problem.f, problem.g,
                                       cfg["nus"][0], rho)
        kappa_rows.append(
            ["kappa"] + [_fmt(condition_number(build_system(m, blocks)))
                         for m in methods])
    return headers, rows, methods, kappa_rows


def run_sparsity(cfg):
    headers = ["method", "n", "n_dofs", "nnz", "dof_reduction_pct"]
    n = cfg["ns"][0]
    problem = get_problem(cfg["problem"], cfg["nus"][0])
    rho = cfg["rho"] if cfg["rho"] is not None else problem.rho_default
    mesh = problem.build_mesh(n)
    layout = build_dof_layout(mesh)
    blocks = assemble_block_system(mesh, layout, problem.f, problem.g,
                                   cfg["nus"][0], rho)
    methods = [m for m in cfg["methods"] if m != "st"] or ["pr", "ppr", "cpr"]
    base = None
    rows = []
    for variant in methods:
        system = build_system(variant, blocks)
        K = system.saddle_matrix()
        dim = K.shape[0]
        if base is None:
            base = dim
        red = 100.0 * (1.0 - dim / base)
        rows.append([VARIANT_LABELS[variant], n, dim, K.nnz, f"{red:.1f}"])
    return headers, rows


def _export_vtk(cfg, path):
    """Write the finest-mesh solution of the first method as VTK."""
    problem = get_problem(cfg["problem"], cfg["nus"][0])
    rho = cfg["rho"] if cfg["rho"] is not None else problem.rho_default
    n = max(cfg["ns"])
    variant = cfg["methods"][0]
    mesh, layout, system, solution = _solve_case(problem, n, variant, rho)
    cont = solution.u[layout.n_enrichment:].reshape(layout.n_vertices,
                                                   layout.dim)
    field = reconstruct(mesh, layout, solution.u)
    write_vtk(mesh, path,
              point_data={"velocity": cont},
              cell_data={"pressure": solution.p,
                         "divergence": field.divergence()})


@click.group()
def main():
    """Enriched Galerkin Stokes experiment driver."""


@main.command()
@click.option("--study", type=click.Choice(["convergence", "robustness",
                                            "precond", "sparsity"]),
              default=None, help="Which experiment to run.")
@click.option("--problem", type=click.Choice(list(PROBLEM_IDS)), default=None,
              help="Benchmark problem (default vortex2d).")
@click.option("--methods", default=None,
              help="Comma list of methods from st,pr,ppr,cpr.")
@click.option("--n", "n_list", default=None,
              help="Comma list of mesh resolutions (h = 1/n).")
@click.option("--nu", "nu_list", default=None,
              help="Comma list of viscosities.")
@click.option("--rho", type=float, default=None,
              help="Penalty parameter (default 10 in 2D, 2 in 3D).")
@click.option("--precond", "kinds", default=None,
              help="Comma list of preconditioner kinds from diag,lower,upper.")
@click.option("--fidelity", type=click.Choice(["exact", "inexact"]),
              default=None, help="Inner block solver fidelity.")
@click.option("--tol", type=float, default=None,
              help="Krylov relative tolerance (default 1e-8).")
@click.option("--max-iter", type=int, default=None,
              help="Krylov iteration cap (default 500).")
@click.option("--out", default=None, help="CSV output path.")
@click.option("--vtk", "vtk_path", default=None,
              help="Also export the finest-mesh solution as legacy VTK.")
@click.option("--extended", is_flag=True,
              help="Allow 3D meshes up to n=32 instead of 16.")
@click.option("--config", "config_path", default=None,
              help="key=value file supplying defaults for any option.")
def run(study, problem, methods, n_list, nu_list, rho, kinds, fidelity,
        tol, max_iter, out, vtk_path, extended, config_path):
    """Run one study and emit a CSV plus an aligned text table.

    CSV columns by study: convergence -> method,n,h,vel_energy,eoc_u,
    p_l2,eoc_p,p_aux,eoc_aux,max_div; robustness -> method,nu,h,
    vel_energy,p_l2,p_aux,max_div; precond -> nu plus one iteration
    column per (method, kind), with a trailing kappa record; sparsity ->
    method,n,n_dofs,nnz,dof_reduction_pct.
    """
    file_cfg = _read_config(config_path) if config_path else {}

    def pick(value, key, fallback):
        if value is not None:
            return value
        return file_cfg.get(key, fallback)

    study = pick(study, "study", "convergence")
    problem = pick(problem, "problem", "vortex2d")
    if problem not in PROBLEM_IDS:
        raise click.BadParameter(f"unknown problem: {problem}")
    methods = _parse_list(pick(methods, "methods", "st,pr,ppr,cpr"), str)
    for m in methods:
        if m not in VARIANTS:
            raise click.BadParameter(f"unknown method: {m}")
    ns = _parse_list(pick(n_list, "n", DEFAULT_NS[study]), int)
    nus = _parse_list(pick(nu_list, "nu", DEFAULT_NUS.get(study, "1e-6")),
                      float)
    rho = pick(rho, "rho", None)
    rho = float(rho) if rho is not None else None
    kinds = _parse_list(pick(kinds, "precond", "diag,lower,upper"), str)
    for k in kinds:
        if k not in PRECOND_KINDS:
            raise click.BadParameter(f"unknown preconditioner kind: {k}")
    fidelity = pick(fidelity, "fidelity", "exact")
    tol = float(pick(tol, "tol", 1e-8))
    max_iter = int(pick(max_iter, "max_iter", 500))
    out = pick(out, "out", "results.csv")
    extended = extended or str(file_cfg.get("extended", "")).lower() == "true"

    dim = 2 if problem == "vortex2d" else 3
    cap = (MAX_N["default2d"] if dim == 2 else
           MAX_N["extended3d"] if extended else MAX_N["default3d"])
    over = [n for n in ns if n > cap]
    if over:
        raise click.BadParameter(
            f"n={over[0]} exceeds the desk-scale cap {cap} for this problem"
            + ("" if dim == 2 else "; pass --extended for n up to 32"))

    cfg = {"study": study, "problem": problem, "methods": methods, "ns": ns,
           "nus": nus, "rho": rho, "kinds": kinds, "fidelity": fidelity,
           "tol": tol, "max_iter": max_iter}

    if study == "convergence":
        headers, rows = run_convergence(cfg)
    elif study == "robustness":
        headers, rows = run_robustness(cfg)
    elif study == "precond":
        headers, rows, methods_used, kappa_rows = run_precond(cfg)
    else:
        headers, rows = run_sparsity(cfg)

    click.echo(f"study={study} problem={problem} fidelity={fidelity}")
    print_table(headers, rows)
    csv_rows = list(rows)
    if study == "precond" and kappa_rows:
        click.echo("")
        print_table(["", *(VARIANT_LABELS[m] for m in methods_used)],
                    kappa_rows)
        csv_rows += kappa_rows
    write_csv(out, headers, csv_rows)
    click.echo(f"\nwrote {out}")

    if vtk_path:
        _export_vtk(cfg, vtk_path)
        click.echo(f"wrote {vtk_path}")


if __name__ == "__main__":
    main()
