"""Batch front end: mesh generation, ensemble runs, convergence studies and
viscosity-deviation condition checks.

Commands
--------
ensnse mesh square|annulus ...      write a mesh file
ensnse run <config>                 time-stepped run -> energy.csv, diagnostics.csv,
                                    meta.txt, snapshots, energy.png
ensnse converge <config>            refinement study -> converge.csv, converge.png
ensnse check <config> [--mu MU]     viscosity-deviation condition report

Exit codes: 0 success, 1 usage or solver error, 2 detected instability
(blow-up for run, any member over the supremal deviation bound for check).
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__
from .config import ConfigError, parse_config_file
from .ensemble import check_viscosity_condition, run_ensemble, theorem31_diagnostic
from .fe_space import build_taylor_hood, interpolate
from .mesh import (
    MeshError,
    gen_offset_annulus,
    gen_unit_square,
    mesh_stats,
    read_mesh,
    write_mesh,
)
from .scenarios import (
    build_case_members,
    convergence_study,
    energy_series,
    green_taylor_member,
    offset_cylinder_initial_velocity,
    offset_cylinder_problem,
)
from .sparse_solve import SingularMatrixError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNSTABLE = 2


def _fmt(value):
    """Deterministic shortest round-trip formatting for CSV cells."""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[k]) for k in header) + "\n")


def build_mesh(cfg):
    if cfg.mesh.kind == "square":
        return gen_unit_square(cfg.mesh.n)
    if cfg.mesh.kind == "annulus":
        return gen_offset_annulus(
            cfg.mesh.n_outer, cfg.mesh.n_inner, cfg.mesh.n_rings, cfg.mesh.grading
        )
    return read_mesh(cfg.mesh.path)


def build_members(cfg):
    if cfg.scenario == "green_taylor":
        return [
            green_taylor_member(m.perturbation, m.nu).member_spec()
            for m in cfg.members
        ]
    return build_case_members(cfg.nus)


def write_snapshot(path, mesh_file, t, member, u, p):
    with open(path, "w") as fh:
        fh.write("evec 1\n")
        fh.write(f"mesh {mesh_file}\n")
        fh.write(f"time {t:.17g}\n")
        fh.write(f"member {member}\n")
        fh.write(f"velocity {u.shape[0]}\n")
        for v in u:
            fh.write(f"{v:.17g}\n")
        fh.write(f"pressure {p.shape[0]}\n")
        for v in p:
            fh.write(f"{v:.17g}\n")


def read_snapshot(path):
    """Read a state snapshot; returns dict with mesh reference and vectors."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    if lines[0] != "evec 1":
        raise ValueError(f"bad snapshot header {lines[0]!r}")
    out = {"mesh": lines[1].split(None, 1)[1]}
    out["time"] = float(lines[2].split()[1])
    out["member"] = int(lines[3].split()[1])
    nu = int(lines[4].split()[1])
    out["velocity"] = np.array([float(v) for v in lines[5 : 5 + nu]])
    np_count = int(lines[5 + nu].split()[1])
    out["pressure"] = np.array([float(v) for v in lines[6 + nu : 6 + nu + np_count]])
    return out


def _write_meta(path, cfg, space, extra):
    st = mesh_stats(space.mesh)
    with open(path, "w") as fh:
        fh.write(f"code_version = {__version__}\n")
        fh.write(f"n_vertices = {st['n_vertices']}\n")
        fh.write(f"n_triangles = {st['n_triangles']}\n")
        fh.write(f"h_max = {st['h_max']:.17g}\n")
        fh.write(f"min_angle_deg = {st['min_angle']:.17g}\n")
        fh.write(f"velocity_dofs = {space.n_velocity}\n")
        fh.write(f"pressure_dofs = {space.n_pressure}\n")
        fh.write(f"taylor_hood_dofs = {space.n_velocity + space.n_pressure}\n")
        fh.write("quadrature_degree = 5\n")
        fh.write("error_quadrature_degree = 7\n")
        for key, value in extra.items():
            fh.write(f"{key} = {value}\n")
        fh.write("--- config echo ---\n")
        fh.write(cfg.echo())


def cmd_run(cfg):
    t_setup = time.perf_counter()
    os.makedirs(cfg.outdir, exist_ok=True)
    mesh = build_mesh(cfg)
    space = build_taylor_hood(mesh)
    specs = build_members(cfg)
    mesh_file = os.path.join(cfg.outdir, "mesh.txt")
    write_mesh(mesh, mesh_file)

    if cfg.scenario == "offset_cylinder":
        u0_shared = offset_cylinder_initial_velocity(space)
        u0 = np.array([u0_shared] * len(specs))
    else:
        u0 = np.array([interpolate(space, s.u0, 0.0) for s in specs])
    setup_time = time.perf_counter() - t_setup

    n_steps = int(round(cfg.T / cfg.dt))
    if abs(n_steps * cfg.dt - cfg.T) > 1e-9 * max(1.0, cfg.T):
        raise ConfigError(f"T={cfg.T} is not an integer multiple of dt={cfg.dt}")
    result = run_ensemble(
        space,
        specs,
        cfg.dt,
        n_steps,
        u0,
        blowup_threshold=cfg.blowup_threshold,
        collect_stability=(cfg.diagnostics == "full"),
        snapshot_times=cfg.snapshots,
    )

    J = len(specs)
    write_csv(
        os.path.join(cfg.outdir, "energy.csv"),
        ["step", "time", "member", "energy", "cfl_monitor", "blowup_flag"],
        energy_series(result, J),
    )

    cond = check_viscosity_condition(cfg.nus, cfg.mu)
    diag_rows = []
    for lvl, t in enumerate(result.times):
        for j in range(J):
            diag_rows.append(
                {
                    "step": lvl,
                    "time": t,
                    "member": j + 1,
                    "cfl_monitor": result.cfl[lvl, j],
                    "div_residual": result.div_residual[lvl],
                    "gauge_multiplier_max": result.lam_max[lvl],
                    "deviation_ratio": cond["ratios"][j],
                    "deviation_ok_supremal": int(cond["pass_supremal"][j]),
                    "deviation_ok_mu": int(cond["pass_mu"][j]),
                }
            )
    write_csv(
        os.path.join(cfg.outdir, "diagnostics.csv"),
        [
            "step",
            "time",
            "member",
            "cfl_monitor",
            "div_residual",
            "gauge_multiplier_max",
            "deviation_ratio",
            "deviation_ok_supremal",
            "deviation_ok_mu",
        ],
        diag_rows,
    )

    for t_snap, state in result.snapshots:
        for j in range(J):
            write_snapshot(
                os.path.join(cfg.outdir, f"state_t{t_snap:.6g}_m{j + 1}.txt"),
                "mesh.txt",
                t_snap,
                j + 1,
                state.u[j],
                state.p[j],
            )

    extra = {
        "scenario": cfg.scenario,
        "n_members": J,
        "nu_bar": repr(cond["nu_bar"]),
        "n_steps_completed": result.n_steps_completed,
        "n_steps_requested": n_steps,
        "factorization_count": result.n_factorizations,
        "blowup": int(result.blowup),
        "wall_setup_s": f"{setup_time:.3f}",
        "wall_step_s": f"{result.wall_times['step']:.3f}",
        "wall_diagnostics_s": f"{result.wall_times['diagnostics']:.3f}",
    }
    if result.blowup:
        extra["blowup_member"] = result.blowup_member + 1
        extra["blowup_time"] = repr(float(result.blowup_time))
    if cfg.diagnostics == "full" and result.stability is not None:
        eps = max(1e-6, min(0.1, 2.0 - 2.0 * np.sqrt(cfg.mu)))
        try:
            diag = theorem31_diagnostic(
                result.stability, cond["nu_bar"], cfg.nus, cfg.dt, cfg.mu, eps
            )
            for j, d in enumerate(diag):
                extra[f"energy_bound_lhs_m{j + 1}"] = repr(d["lhs"])
                extra[f"energy_bound_rhs_m{j + 1}"] = repr(d["rhs"])
                extra[f"energy_bound_ok_m{j + 1}"] = int(d["satisfied"])
        except (ValueError, IndexError):
            pass  # too-short history after early blow-up
    _write_meta(os.path.join(cfg.outdir, "meta.txt"), cfg, space, extra)

    if cfg.plots:
        from .report import plot_energy

        plot_energy(
            result.times,
            result.energies,
            os.path.join(cfg.outdir, "energy.png"),
            blowup_threshold=cfg.blowup_threshold,
            title=f"{cfg.scenario}: kinetic energy",
        )

    if result.blowup:
        print(
            f"blow-up: member {result.blowup_member + 1} at "
            f"t={result.blowup_time:.4g}; partial outputs in {cfg.outdir}"
        )
        return EXIT_UNSTABLE
    print(f"completed {result.n_steps_completed} steps; outputs in {cfg.outdir}")
    return EXIT_OK


_RATE_KEYS = {"rate_linf", "rate_grad", "rate_l2l2"}


def cmd_converge(cfg, independent=False):
    if cfg.scenario != "green_taylor":
        raise ConfigError(
            "convergence studies need an analytic solution; use scenario green_taylor"
        )
    os.makedirs(cfg.outdir, exist_ok=True)

    def factory():
        return [green_taylor_member(m.perturbation, m.nu) for m in cfg.members]

    rows = convergence_study(
        factory,
        cfg.levels,
        inv_h0=cfg.mesh.n,
        dt0=cfg.dt,
        T=cfg.T,
        independent=independent,
    )
    header = [
        "level",
        "inv_h",
        "member",
        "err_linf_l2",
        "rate_linf",
        "err_l2_grad",
        "rate_grad",
        "err_l2_l2",
        "rate_l2l2",
    ]
    if cfg.levels == 1:
        header = [h for h in header if h not in _RATE_KEYS]
    name = "converge_independent.csv" if independent else "converge.csv"
    write_csv(os.path.join(cfg.outdir, name), header, rows)
    if cfg.plots:
        from .report import plot_convergence

        png = "converge_independent.png" if independent else "converge.png"
        mode = "independent runs" if independent else "ensemble run"
        plot_convergence(
            rows, os.path.join(cfg.outdir, png), title=f"Convergence ({mode})"
        )
    for r in rows:
        rate = "" if r.get("rate_linf") is None else f"  rate {r['rate_linf']:.2f}"
        print(
            f"level {r['level']} (1/h={r['inv_h']}) member {r['member']}: "
            f"max-L2 {r['err_linf_l2']:.3e}{rate}"
        )
    return EXIT_OK


def cmd_check(cfg, mu=None):
    mu = cfg.mu if mu is None else mu
    report = check_viscosity_condition(cfg.nus, mu)
    print(f"nu_bar = {report['nu_bar']:.6g}, bound sqrt(mu)/3 = {report['bound_mu']:.6g}"
          f" (mu = {mu}), supremal bound 1/3")
    for j, nu in enumerate(cfg.nus):
        ratio = report["ratios"][j]
        ok_mu = "pass" if report["pass_mu"][j] else "FAIL"
        ok_sup = "pass" if report["pass_supremal"][j] else "FAIL"
        print(
            f"member {j + 1}: nu = {nu:<10g} ratio = {ratio:.6g}  "
            f"vs sqrt(mu)/3: {ok_mu}  vs 1/3: {ok_sup}"
        )
    return EXIT_OK if report["all_pass_supremal"] else EXIT_ERROR


def cmd_mesh(args):
    if args.kind == "square":
        m = gen_unit_square(args.n)
    else:
        m = gen_offset_annulus(args.n_outer, args.n_inner, args.n_rings, args.grading)
    write_mesh(m, args.output)
    st = mesh_stats(m)
    print(
        f"wrote {args.output}: {st['n_vertices']} vertices, "
        f"{st['n_triangles']} triangles, h_max={st['h_max']:.6g}, "
        f"min_angle={st['min_angle']:.3g} deg"
    )
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ensnse",
        description="Ensemble time stepping for 2D incompressible Navier-Stokes",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_mesh = sub.add_parser("mesh", help="generate a mesh file")
    mesh_sub = p_mesh.add_subparsers(dest="kind", required=True)
    p_sq = mesh_sub.add_parser("square", help="structured unit-square mesh")
    p_sq.add_argument("--n", type=int, required=True, help="cells per side")
    p_sq.add_argument("-o", "--output", required=True)
    p_an = mesh_sub.add_parser("annulus", help="offset-circle annulus mesh")
    p_an.add_argument("--n-outer", type=int, default=80, dest="n_outer")
    p_an.add_argument("--n-inner", type=int, default=60, dest="n_inner")
    p_an.add_argument("--n-rings", type=int, default=25, dest="n_rings")
    p_an.add_argument("--grading", type=float, default=0.85)
    p_an.add_argument("-o", "--output", required=True)

    p_run = sub.add_parser("run", help="time-stepped ensemble run")
    p_run.add_argument("config")

    p_conv = sub.add_parser("converge", help="coupled space-time refinement study")
    p_conv.add_argument("config")
    p_conv.add_argument(
        "--independent",
        action="store_true",
        help="run each member alone (one matrix per member) instead of the ensemble",
    )

    p_check = sub.add_parser("check", help="viscosity-deviation condition check")
    p_check.add_argument("config")
    p_check.add_argument("--mu", type=float, default=None)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "mesh":
            return cmd_mesh(args)
        cfg = parse_config_file(args.config)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "converge":
            return cmd_converge(cfg, independent=args.independent)
        if args.command == "check":
            return cmd_check(cfg, mu=args.mu)
    except (ConfigError, MeshError, SingularMatrixError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
