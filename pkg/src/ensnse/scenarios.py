"""Built-in problem definitions, error norms and convergence/stability studies.

Two scenarios are provided:

* ``green_taylor``: a non-decaying Green-Taylor vortex on the unit square
  with an analytic solution; members scale the reference velocity by
  (1 + perturbation) and carry distinct viscosities.  Forcing terms are
  derived symbolically from the scaled fields, so the momentum residual of
  every member vanishes identically (the scaled pressure is quadratic in the
  scale factor, which preserves the exact cancellation of the nonlinear and
  pressure-gradient terms).
* ``offset_cylinder``: flow between two offset circles driven by a
  counterclockwise rotational body force with no-slip walls; the initial
  condition solves the steady Stokes problem with the shared forcing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy

from .assembly import assemble_load, build_operator_set
from .ensemble import MemberSpec, run_ensemble
from .fe_space import (
    boundary_dofs,
    boundary_scalar_nodes,
    build_taylor_hood,
    interpolate,
)
from .mesh import gen_unit_square
from .sparse_solve import build_saddle_matrix, factorize, solve_multi

_X, _Y, _T = sympy.symbols("x y t", real=True)


def _lambdify_vec(exprs):
    funcs = [sympy.lambdify((_X, _Y, _T), e, "numpy") for e in exprs]

    def call(x, y, t):
        return tuple(np.broadcast_to(np.asarray(f(x, y, t), float), np.shape(x))
                     for f in funcs)

    return call


def _lambdify_scalar(expr):
    f = sympy.lambdify((_X, _Y, _T), expr, "numpy")

    def call(x, y, t):
        return np.broadcast_to(np.asarray(f(x, y, t), float), np.shape(x))

    return call


@dataclass
class ManufacturedSolution:
    """Analytic velocity/pressure pair with the symbolically derived forcing."""

    scale: float
    nu: float
    u: object  # (x, y, t) -> (ux, uy)
    p: object  # (x, y, t) -> p, zero-mean gauge not applied
    f: object  # (x, y, t) -> (fx, fy)
    grad_u: object  # (x, y, t) -> (dux_dx, dux_dy, duy_dx, duy_dy)
    label: str = ""

    def member_spec(self):
        return MemberSpec(
            nu=self.nu,
            f=self.f,
            g=self.u,
            u0=self.u,
            exact_u=self.u,
            exact_grad_u=self.grad_u,
            exact_p=self.p,
            label=self.label,
        )


def manufactured_from_sympy(u_expr, p_expr, nu, scale=1.0, label=""):
    """Build a ManufacturedSolution from sympy velocity/pressure expressions.

    The forcing is f = u_t + (u . grad) u - nu lap(u) + grad p, derived
    symbolically, so (u, p, f) satisfies the momentum equation identically.
    """
    ux, uy = u_expr
    div = sympy.simplify(sympy.diff(ux, _X) + sympy.diff(uy, _Y))
    if div != 0:
        raise ValueError(f"manufactured velocity is not divergence-free: {div}")
    conv = [ux * sympy.diff(c, _X) + uy * sympy.diff(c, _Y) for c in (ux, uy)]
    lap = [sympy.diff(c, _X, 2) + sympy.diff(c, _Y, 2) for c in (ux, uy)]
    grad_p = [sympy.diff(p_expr, _X), sympy.diff(p_expr, _Y)]
    f_expr = [
        sympy.simplify(sympy.diff(c, _T) + conv[i] - nu * lap[i] + grad_p[i])
        for i, c in enumerate((ux, uy))
    ]
    grads = [
        sympy.diff(ux, _X), sympy.diff(ux, _Y),
        sympy.diff(uy, _X), sympy.diff(uy, _Y),
    ]
    return ManufacturedSolution(
        scale=scale,
        nu=nu,
        u=_lambdify_vec([ux, uy]),
        p=_lambdify_scalar(p_expr),
        f=_lambdify_vec(f_expr),
        grad_u=_lambdify_vec(grads),
        label=label,
    )


def green_taylor_member(eps_pert, nu):
    """Scaled Green-Taylor vortex member on the unit square.

    Velocity (1 + eps_pert) s(t) (-cos x sin y, sin x cos y) with
    s(t) = sin 2t, pressure scaled by (1 + eps_pert)^2 so the nonlinear and
    pressure-gradient terms cancel exactly; starts from rest (s(0) = 0).
    """
    a = sympy.Float(1.0 + eps_pert, 17)
    s = sympy.sin(2 * _T)
    ux = -a * s * sympy.cos(_X) * sympy.sin(_Y)
    uy = a * s * sympy.sin(_X) * sympy.cos(_Y)
    p = -(a**2) / 4 * (sympy.cos(2 * _X) + sympy.cos(2 * _Y)) * s**2
    return manufactured_from_sympy(
        (ux, uy), p, nu, scale=1.0 + eps_pert,
        label=f"green_taylor(nu={nu}, pert={eps_pert:+g})",
    )


@dataclass
class OffsetCylinderProblem:
    """Flow between two offset circles (outer radius 1, inner 0.1 at (1/2, 0))."""

    stokes_viscosity: float = 0.03

    @staticmethod
    def f(x, y, t):
        s = 1.0 - x * x - y * y
        return -6.0 * y * s, 6.0 * x * s

    @staticmethod
    def g(x, y, t):
        z = np.zeros_like(np.asarray(x, float))
        return z, z

    def member_spec(self, nu, label=""):
        return MemberSpec(nu=nu, f=self.f, g=self.g, label=label)


def offset_cylinder_problem():
    return OffsetCylinderProblem()


def solve_steady_stokes(space, nu, f, g=None, t=0.0, degree=5):
    """Steady Stokes solve: nu (grad u, grad v) - (p, div v) = (f, v), div u = 0.

    Reuses the saddle-point machinery with the mass and convection blocks
    dropped.  Returns (u, p, gauge multiplier).
    """
    ops = build_operator_set(space, degree)
    constrained = boundary_dofs(space)
    system = build_saddle_matrix(ops, None, 0.0, nu, constrained)
    fact = factorize(system.A, context="steady Stokes")
    F = assemble_load(space, f, t, degree)
    if g is None:
        bvals = np.zeros(constrained.shape[0])
    else:
        nodes = boundary_scalar_nodes(space)
        coords = space.node_coords()[nodes]
        out = g(coords[:, 0], coords[:, 1], t)
        gx = np.broadcast_to(np.asarray(out[0], float), coords[:, 0].shape)
        gy = np.broadcast_to(np.asarray(out[1], float), coords[:, 0].shape)
        bvals = np.concatenate([gx, gy])
    rhs = system.reduced_rhs(F, bvals)
    x = solve_multi(fact, rhs)[:, 0]
    return system.split_solution(x, bvals)


class ErrorRecorder:
    """Accumulates discrete error norms of a run against analytic solutions.

    Per member, tracks the max-in-time L2 error, the time-accumulated
    gradient error sqrt(dt sum_n ||grad(u^n - u_h^n)||^2), and the
    no-gradient variant sqrt(dt sum_n ||u^n - u_h^n||^2).  Norms use a
    degree-7 rule so quadrature error cannot pollute the rates.
    """

    def __init__(self, space, members, degree=7):
        self.space = space
        self.members = list(members)  # MemberSpec-likes with exact_u/exact_grad_u
        self.data = space.element_data(degree)
        self.max_l2 = np.zeros(len(self.members))
        self.sum_l2_sq = np.zeros(len(self.members))
        self.sum_grad_sq = np.zeros(len(self.members))

    def _field_at_qpoints(self, u):
        d = self.data
        n_s = self.space.n_scalar
        cells = self.space.p2_cells
        vals = np.empty(d.qpoints.shape)
        vals[..., 0] = np.einsum("ek,qk->eq", u[:n_s][cells], d.phi2)
        vals[..., 1] = np.einsum("ek,qk->eq", u[n_s:][cells], d.phi2)
        grads = np.empty(d.qpoints.shape[:2] + (2, 2))
        grads[:, :, 0, :] = np.einsum("ek,eqkd->eqd", u[:n_s][cells], d.grad2)
        grads[:, :, 1, :] = np.einsum("ek,eqkd->eqd", u[n_s:][cells], d.grad2)
        return vals, grads

    def record(self, level, t, u_rows):
        d = self.data
        w = d.rule.weights
        areas = self.space.areas
        x = d.qpoints[..., 0].ravel()
        y = d.qpoints[..., 1].ravel()
        shape = d.qpoints.shape[:2]
        for j, spec in enumerate(self.members):
            vals, grads = self._field_at_qpoints(u_rows[j])
            ex = spec.exact_u(x, y, t)
            err = vals.copy()
            err[..., 0] -= ex[0].reshape(shape)
            err[..., 1] -= ex[1].reshape(shape)
            l2_sq = float(
                np.einsum("e,q,eqc->", areas, w, err**2)
            )
            gx = spec.exact_grad_u(x, y, t)
            gerr = grads.copy()
            gerr[:, :, 0, 0] -= gx[0].reshape(shape)
            gerr[:, :, 0, 1] -= gx[1].reshape(shape)
            gerr[:, :, 1, 0] -= gx[2].reshape(shape)
            gerr[:, :, 1, 1] -= gx[3].reshape(shape)
            grad_sq = float(np.einsum("e,q,eqcd->", areas, w, gerr**2))
            self.max_l2[j] = max(self.max_l2[j], np.sqrt(l2_sq))
            self.sum_l2_sq[j] += l2_sq
            self.sum_grad_sq[j] += grad_sq

    def finalize(self, dt):
        return [
            {
                "err_linf_l2": float(self.max_l2[j]),
                "err_l2_grad": float(np.sqrt(dt * self.sum_grad_sq[j])),
                "err_l2_l2": float(np.sqrt(dt * self.sum_l2_sq[j])),
            }
            for j in range(len(self.members))
        ]


def _steps_for(T, dt):
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"final time {T} is not an integer multiple of dt={dt}")
    return n


def convergence_study(
    solutions_factory,
    levels,
    inv_h0=10,
    dt0=0.05,
    T=1.0,
    independent=False,
    degree=5,
):
    """Coupled space-time refinement study on the unit square.

    Runs the ensemble at (1/h, dt) = (inv_h0 2^k, dt0 / 2^k) for
    k = 0..levels-1 and returns one row dict per (level, member) with error
    norms and observed rates between consecutive levels.  With
    ``independent=True`` each member is run alone (J = 1), which recovers the
    conventional one-matrix-per-member scheme for comparison.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    rows = []
    per_level = []
    for k in range(levels):
        n = inv_h0 * 2**k
        dt = dt0 / 2**k
        n_steps = _steps_for(T, dt)
        mesh = gen_unit_square(n)
        space = build_taylor_hood(mesh)
        sols = solutions_factory()
        specs = [s.member_spec() for s in sols]
        u0 = np.array([interpolate(space, s.u0, 0.0) for s in specs])
        errs = [None] * len(specs)
        if independent:
            for j, spec in enumerate(specs):
                rec = ErrorRecorder(space, [spec])
                res = run_ensemble(
                    space, [spec], dt, n_steps, u0[j : j + 1],
                    degree=degree, on_state=rec.record,
                )
                if res.blowup:
                    raise RuntimeError(f"level {k} member {j + 1} diverged")
                errs[j] = rec.finalize(dt)[0]
        else:
            rec = ErrorRecorder(space, specs)
            res = run_ensemble(
                space, specs, dt, n_steps, u0, degree=degree, on_state=rec.record
            )
            if res.blowup:
                raise RuntimeError(f"level {k} diverged")
            errs = rec.finalize(dt)
        per_level.append(errs)
        for j, e in enumerate(errs):
            row = {"level": k, "inv_h": n, "member": j + 1}
            row.update(e)
            for key, rate_key in (
                ("err_linf_l2", "rate_linf"),
                ("err_l2_grad", "rate_grad"),
                ("err_l2_l2", "rate_l2l2"),
            ):
                if k == 0:
                    row[rate_key] = None
                else:
                    prev = per_level[k - 1][j][key]
                    row[rate_key] = float(np.log2(prev / e[key]))
            rows.append(row)
    return rows


def bdf2_truncation_check(u, du, dts, ts=None):
    """Consistency error of the two-step backward differentiation quotient.

    Evaluates q(t, dt) = (3u(t) - 4u(t - dt) + u(t - 2dt)) / (2 dt) - u'(t)
    on a time grid for each dt, reporting the max error per dt, pairwise
    log2 ratios, and the least-squares observed order.
    """
    dts = np.asarray(sorted(dts, reverse=True), dtype=np.float64)
    if ts is None:
        ts = np.linspace(0.5, 7.0, 131)
    ts = np.asarray(ts, dtype=np.float64)
    max_err = []
    for dt in dts:
        q = (3.0 * u(ts) - 4.0 * u(ts - dt) + u(ts - 2.0 * dt)) / (2.0 * dt)
        max_err.append(float(np.abs(q - du(ts)).max()))
    max_err = np.array(max_err)
    orders = [
        float(np.log2(max_err[i] / max_err[i + 1]))
        for i in range(len(dts) - 1)
        if max_err[i + 1] > 0.0
    ]
    if np.all(max_err > 0.0) and len(dts) >= 2:
        slope = float(np.polyfit(np.log(dts), np.log(max_err), 1)[0])
    else:
        slope = float("inf")  # exact quotient
    return {"dts": dts, "max_err": max_err, "orders": orders, "order": slope}


def energy_series(result, n_members):
    """Flatten a RunResult into rows (step, time, member, energy, cfl, flag).

    The blow-up flag is 1 for the flagged member from its blow-up time on
    (and for non-finite energies), else 0.  Members are 1-based.
    """
    rows = []
    for lvl, t in enumerate(result.times):
        for j in range(n_members):
            e = result.energies[lvl, j]
            flag = 0
            if result.blowup and result.blowup_member == j:
                if result.blowup_time is not None and t >= result.blowup_time - 1e-12:
                    flag = 1
            if not np.isfinite(e):
                flag = 1
            rows.append(
                {
                    "step": lvl,
                    "time": t,
                    "member": j + 1,
                    "energy": e,
                    "cfl_monitor": result.cfl[lvl, j],
                    "blowup_flag": flag,
                }
            )
    return rows


def build_case_members(nus, problem=None):
    """Offset-cylinder member specs for a list of viscosities."""
    problem = problem or offset_cylinder_problem()
    return [problem.member_spec(nu, label=f"member {j+1}") for j, nu in enumerate(nus)]


def offset_cylinder_initial_velocity(space, problem=None, degree=5):
    """Shared initial condition: steady Stokes flow for the rotational forcing."""
    problem = problem or offset_cylinder_problem()
    u0, _, _ = solve_steady_stokes(
        space, problem.stokes_viscosity, problem.f, degree=degree
    )
    return u0
