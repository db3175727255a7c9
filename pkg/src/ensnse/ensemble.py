"""Second-order ensemble time stepping with a shared coefficient matrix.

J incompressible-flow realizations, each with its own viscosity, body force,
boundary data and initial condition, advance together.  Every step assembles
one saddle matrix built from the ensemble-mean quantities

    ubar^n  = mean_j (2 u_j^n - u_j^{n-1})        (mean of extrapolants)
    nu_bar  = mean_j nu_j

factorizes it once, and solves it against J member-specific right-hand sides
carrying the explicit fluctuation and viscosity-deviation terms.  Member
order never affects results: ensemble reductions sum in value-sorted order,
so permuting the member list permutes outputs bitwise.

The two-step scheme needs one bootstrap step; it uses the analogous
first-order ensemble scheme (backward-Euler quotient, mean of the initial
fields), which preserves the one-factorization-per-step property from the
start.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import (
    DEFAULT_DEGREE,
    assemble_convection,
    assemble_load,
    build_operator_set,
    dirichlet_split,
    trilinear_action,
)
from .fe_space import boundary_dofs, boundary_scalar_nodes
from .sparse_solve import build_saddle_matrix, factorize, solve_multi

SUPREMAL_DEVIATION_BOUND = 1.0 / 3.0


class DivergenceError(RuntimeError):
    """A solve produced non-finite values (the run has blown up)."""

    def __init__(self, message, member=None, time=None):
        super().__init__(message)
        self.member = member
        self.time = time


@dataclass
class MemberSpec:
    """Data defining one ensemble member.

    ``f`` and ``g`` are analytic callables ``(x, y, t) -> (fx, fy)`` for the
    body force and boundary velocity.  ``u0`` optionally gives an analytic
    initial velocity; runs may instead supply discrete initial data (e.g. a
    steady-flow solve).  ``exact_u``/``exact_grad_u`` enable error norms.
    """

    nu: float
    f: object
    g: object
    u0: object = None
    exact_u: object = None
    exact_grad_u: object = None
    exact_p: object = None
    label: str = ""

    def __post_init__(self):
        if not self.nu > 0.0:
            raise ValueError(f"viscosity must be positive, got {self.nu}")


@dataclass
class EnsembleState:
    """Per-member coefficient history at time level n (n >= 1)."""

    u: np.ndarray  # (J, n_velocity) at t_n
    u_prev: np.ndarray  # (J, n_velocity) at t_{n-1}
    p: np.ndarray  # (J, n_pressure) at t_n
    lam: np.ndarray  # (J,) pressure-gauge multipliers
    n: int
    t: float
    dt: float

    @property
    def n_members(self):
        return self.u.shape[0]


def sorted_sum(stack):
    """Sum over axis 0 in value-sorted order (permutation-invariant bitwise)."""
    return np.sort(stack, axis=0).sum(axis=0)


def mean_viscosity(nus):
    return float(sorted_sum(np.asarray(nus, dtype=np.float64)) / len(nus))


def extrapolants(state):
    return 2.0 * state.u - state.u_prev


def ensemble_mean(state):
    """Mean over members of the second-order extrapolants 2u^n - u^{n-1}."""
    ex = extrapolants(state)
    return sorted_sum(ex) / state.n_members


def fluctuation(state, j):
    """Member j's extrapolant minus the ensemble mean."""
    return extrapolants(state)[j] - ensemble_mean(state)


def kinetic_energy(M, u):
    """0.5 u^T M u for a velocity coefficient vector."""
    return 0.5 * float(u @ (M @ u))


def check_viscosity_condition(nus, mu=None):
    """Per-member viscosity deviation ratios |nu_j - nu_bar| / nu_bar.

    Tests each ratio against the supremal bound 1/3 and, when ``mu`` in
    [0, 1) is given, against the sharper bound sqrt(mu)/3.
    """
    if mu is not None and not 0.0 <= mu < 1.0:
        raise ValueError(f"mu must lie in [0, 1), got {mu}")
    nus = np.asarray(nus, dtype=np.float64)
    nu_bar = mean_viscosity(nus)
    ratios = np.abs(nus - nu_bar) / nu_bar
    report = {
        "nu_bar": nu_bar,
        "ratios": ratios,
        "pass_supremal": ratios <= SUPREMAL_DEVIATION_BOUND + 1e-15,
        "all_pass_supremal": bool(np.all(ratios <= SUPREMAL_DEVIATION_BOUND + 1e-15)),
    }
    if mu is not None:
        bound = np.sqrt(mu) / 3.0
        report["mu"] = mu
        report["bound_mu"] = bound
        report["pass_mu"] = ratios <= bound + 1e-15
        report["all_pass_mu"] = bool(np.all(ratios <= bound + 1e-15))
    return report


class EnsembleStepper:
    """Shared-matrix time stepper for an ensemble of member problems."""

    def __init__(self, space, specs, dt, degree=DEFAULT_DEGREE):
        if dt <= 0.0:
            raise ValueError(f"dt must be positive, got {dt}")
        if not specs:
            raise ValueError("need at least one member")
        self.space = space
        self.specs = list(specs)
        self.dt = float(dt)
        self.degree = degree
        self.ops = build_operator_set(space, degree)
        self.constrained = boundary_dofs(space)
        self.nus = np.array([s.nu for s in self.specs])
        self.nu_bar = mean_viscosity(self.nus)
        self.n_factorizations = 0

    @property
    def n_members(self):
        return len(self.specs)

    def boundary_values(self, spec, t):
        """Member boundary velocity interpolated on the constrained dofs."""
        nodes = boundary_scalar_nodes(self.space)
        coords = self.space.node_coords()[nodes]
        out = spec.g(coords[:, 0], coords[:, 1], t)
        gx = np.broadcast_to(np.asarray(out[0], float), coords[:, 0].shape)
        gy = np.broadcast_to(np.asarray(out[1], float), coords[:, 0].shape)
        return np.concatenate([gx, gy])

    def _advance(self, mass_coeff, rhs_coeff, hist, ubar, explicit_w, u_expl, t_new):
        """One shared solve: common matrix, J member right-hand sides.

        The member-j velocity right-hand side is

            F_j(t_new) + rhs_coeff * M hist_j
            - b*(explicit_w_j, u_expl_j, .) - (nu_j - nu_bar) K u_expl_j

        plus Dirichlet lifting at t_new.
        """
        if not np.all(np.isfinite(ubar)):
            raise DivergenceError(
                f"non-finite ensemble mean at t={t_new:.6g}", time=t_new
            )
        N = assemble_convection(self.space, ubar, self.degree)
        system = build_saddle_matrix(
            self.ops, N, mass_coeff, self.nu_bar, self.constrained
        )
        fact = factorize(system.A, context=f"time step to t={t_new:.6g}")
        self.n_factorizations += 1

        rhs_cols = np.empty((system.A.shape[0], self.n_members))
        bvals = []
        for j, spec in enumerate(self.specs):
            rhs_vel = assemble_load(self.space, spec.f, t_new, self.degree)
            rhs_vel += rhs_coeff * (self.ops.M @ hist[j])
            rhs_vel -= trilinear_action(
                self.space, explicit_w[j], u_expl[j], self.degree
            )
            dev = spec.nu - self.nu_bar
            if dev != 0.0:
                rhs_vel -= dev * (self.ops.K @ u_expl[j])
            g = self.boundary_values(spec, t_new)
            bvals.append(g)
            rhs_cols[:, j] = system.reduced_rhs(rhs_vel, g)

        X = solve_multi(fact, rhs_cols)
        u_new = np.empty((self.n_members, self.space.n_velocity))
        p_new = np.empty((self.n_members, self.space.n_pressure))
        lam = np.empty(self.n_members)
        for j in range(self.n_members):
            u_new[j], p_new[j], lam[j] = system.split_solution(X[:, j], bvals[j])
            if not np.all(np.isfinite(u_new[j])):
                raise DivergenceError(
                    f"member {j + 1} diverged at t={t_new:.6g}",
                    member=j,
                    time=t_new,
                )
        return u_new, p_new, lam

    def bootstrap(self, u0_list, t0=0.0):
        """First-order ensemble step from initial data; returns the state at n=1.

        The backward-Euler quotient replaces the two-step one, the mean of
        the initial fields replaces the extrapolant mean, and the explicit
        terms use the initial fields themselves.
        """
        u0 = np.asarray(u0_list, dtype=np.float64)
        if u0.shape != (self.n_members, self.space.n_velocity):
            raise ValueError(
                f"initial data shape {u0.shape} != "
                f"({self.n_members}, {self.space.n_velocity})"
            )
        ubar0 = sorted_sum(u0) / self.n_members
        uprime0 = u0 - ubar0
        c = 1.0 / self.dt
        u1, p1, lam = self._advance(c, c, u0, ubar0, uprime0, u0, t0 + self.dt)
        return EnsembleState(
            u=u1, u_prev=u0, p=p1, lam=lam, n=1, t=t0 + self.dt, dt=self.dt
        )

    def step(self, state):
        """Advance the two-step scheme from level n >= 1 to n+1."""
        if state.n < 1:
            raise ValueError("two-step scheme needs history (n >= 1)")
        ex = extrapolants(state)
        ubar = sorted_sum(ex) / state.n_members
        uprime = ex - ubar
        hist = 4.0 * state.u - state.u_prev
        u_new, p_new, lam = self._advance(
            3.0 / (2.0 * self.dt),
            1.0 / (2.0 * self.dt),
            hist,
            ubar,
            uprime,
            ex,
            state.t + self.dt,
        )
        return EnsembleState(
            u=u_new,
            u_prev=state.u,
            p=p_new,
            lam=lam,
            n=state.n + 1,
            t=state.t + self.dt,
            dt=self.dt,
        )

    # -- diagnostics ----------------------------------------------------

    def divergence_residual(self, u):
        """Max-norm of the discrete divergence constraint B u."""
        return float(np.abs(self.ops.B @ u).max())

    def cfl_monitor(self, state):
        """Per-member dt ||grad u'_j^n||^2 / (nu_bar h_max).

        The computable part of the step-size condition, without the
        unknowable mesh-dependent constant; meant for logging/warning, never
        for aborting a run.
        """
        ex = extrapolants(state)
        ubar = sorted_sum(ex) / state.n_members
        h = self.space.mesh.h_max
        out = np.empty(state.n_members)
        for j in range(state.n_members):
            up = ex[j] - ubar
            out[j] = state.dt * float(up @ (self.ops.K @ up)) / (self.nu_bar * h)
        return out

    def kinetic_energies(self, u_rows):
        return np.array([kinetic_energy(self.ops.M, u) for u in u_rows])


@dataclass
class StabilityHistory:
    """Per-step norms feeding the discrete energy-bound diagnostic."""

    l2_sq: list = field(default_factory=list)  # ||u^n||^2 per member, n >= 0
    extrap_sq: list = field(default_factory=list)  # ||2u^n - u^{n-1}||^2, n >= 1
    grad_sq: list = field(default_factory=list)  # ||grad u^n||^2, n >= 1
    second_diff_sq: list = field(default_factory=list)  # ||u^{n+1}-2u^n+u^{n-1}||^2
    f_dual_sq: list = field(default_factory=list)  # ||f^{n+1}||_{-1}^2, n >= 1


@dataclass
class RunResult:
    """Outcome of a time-stepped ensemble run."""

    times: np.ndarray  # recorded levels t_0 .. t_N (possibly truncated)
    energies: np.ndarray  # (levels, J)
    cfl: np.ndarray  # (levels, J); zeros at n=0
    div_residual: np.ndarray  # (levels,) max over members, after each solve
    lam_max: np.ndarray  # (levels,) max |gauge multiplier|
    blowup: bool
    blowup_member: int | None  # 0-based
    blowup_time: float | None
    n_steps_completed: int
    n_factorizations: int
    final_state: EnsembleState | None
    stability: StabilityHistory | None
    wall_times: dict
    snapshots: list  # (t, EnsembleState) at requested times


def run_ensemble(
    space,
    specs,
    dt,
    n_steps,
    u0_list,
    t0=0.0,
    degree=DEFAULT_DEGREE,
    blowup_threshold=1e6,
    collect_stability=False,
    snapshot_times=(),
    on_state=None,
):
    """March the ensemble for n_steps, monitoring energy and divergence.

    Stops early when any member's kinetic energy exceeds ``blowup_threshold``
    or a solve produces non-finite values; the partial series is returned
    with the offending member and time flagged.  ``on_state(level, t, u_rows)``
    is invoked for the initial data and after every step (used by error
    recorders).
    """
    t_start = time.perf_counter()
    stepper = EnsembleStepper(space, specs, dt, degree=degree)
    wall = {"setup": 0.0, "step": 0.0, "diagnostics": 0.0}

    u0 = np.asarray(u0_list, dtype=np.float64)
    J = len(stepper.specs)
    times = [t0]
    energies = [stepper.kinetic_energies(u0)]
    cfl = [np.zeros(J)]
    div0 = max(stepper.divergence_residual(u0[j]) for j in range(J))
    div_res = [div0]
    lam_max = [0.0]
    snapshots = []
    stability = StabilityHistory() if collect_stability else None
    riesz = None
    if collect_stability:
        K_ff, _, keep_v = dirichlet_split(stepper.ops.K, stepper.constrained)
        riesz = (spla.splu(K_ff.tocsc()), keep_v)
        stability.l2_sq.append(
            [float(u0[j] @ (stepper.ops.M @ u0[j])) for j in range(J)]
        )
    if on_state is not None:
        on_state(0, t0, u0)
    wall["setup"] = time.perf_counter() - t_start

    def record(state):
        t1 = time.perf_counter()
        energies.append(stepper.kinetic_energies(state.u))
        cfl.append(stepper.cfl_monitor(state))
        div_res.append(
            max(stepper.divergence_residual(state.u[j]) for j in range(J))
        )
        lam_max.append(float(np.abs(state.lam).max()))
        times.append(state.t)
        if stability is not None:
            M, K = stepper.ops.M, stepper.ops.K
            stability.l2_sq.append(
                [float(state.u[j] @ (M @ state.u[j])) for j in range(J)]
            )
            ex = extrapolants(state)
            stability.extrap_sq.append(
                [float(ex[j] @ (M @ ex[j])) for j in range(J)]
            )
            stability.grad_sq.append(
                [float(state.u[j] @ (K @ state.u[j])) for j in range(J)]
            )
            if state.n >= 2:
                dd = state.u - 2.0 * state.u_prev + prev_prev[0]
                stability.second_diff_sq.append(
                    [float(dd[j] @ (M @ dd[j])) for j in range(J)]
                )
            lu, keep_v = riesz
            dual = []
            for spec in stepper.specs:
                F = assemble_load(space, spec.f, state.t, degree)[keep_v]
                z = lu.solve(F)
                dual.append(float(F @ z))
            stability.f_dual_sq.append(dual)
        if on_state is not None:
            on_state(state.n, state.t, state.u)
        wall["diagnostics"] += time.perf_counter() - t1

    def check_blowup(state):
        e = energies[-1]
        bad = ~np.isfinite(e) | (e > blowup_threshold)
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            return j, state.t
        return None

    blowup = None
    state = None
    prev_prev = [u0]
    n_done = 0
    try:
        t1 = time.perf_counter()
        state = stepper.bootstrap(u0, t0=t0)
        wall["step"] += time.perf_counter() - t1
        n_done = 1
        record(state)
        blowup = check_blowup(state)
        for _ in range(1, n_steps):
            if blowup is not None:
                break
            prev_prev[0] = state.u_prev
            t1 = time.perf_counter()
            state = stepper.step(state)
            wall["step"] += time.perf_counter() - t1
            n_done = state.n
            record(state)
            for t_snap in snapshot_times:
                if abs(state.t - t_snap) <= 0.5 * dt and not any(
                    abs(t_snap - ts) <= 0.5 * dt for ts, _ in snapshots
                ):
                    snapshots.append((state.t, state))
            blowup = check_blowup(state)
    except DivergenceError as exc:
        member = exc.member if exc.member is not None else 0
        blowup = (member, exc.time if exc.time is not None else times[-1] + dt)

    return RunResult(
        times=np.array(times),
        energies=np.array(energies),
        cfl=np.array(cfl),
        div_residual=np.array(div_res),
        lam_max=np.array(lam_max),
        blowup=blowup is not None,
        blowup_member=None if blowup is None else blowup[0],
        blowup_time=None if blowup is None else blowup[1],
        n_steps_completed=n_done,
        n_factorizations=stepper.n_factorizations,
        final_state=state,
        stability=stability,
        wall_times=wall,
        snapshots=snapshots,
    )


def theorem31_diagnostic(history, nu_bar, nus, dt, mu, eps):
    """Evaluate both sides of the discrete long-time energy bound.

    ``history`` is a StabilityHistory over levels 1..N (with the initial
    ||u^0||^2 prepended to ``l2_sq``).  The dual norm of the forcing is the
    discrete Riesz surrogate recorded during the run.  Returns one dict per
    member with ``lhs``, ``rhs`` and ``satisfied``; the bound is guaranteed
    only under the step-size and deviation conditions, so callers should
    report rather than hard-assert it.
    """
    if not 0.0 <= mu < 1.0:
        raise ValueError(f"mu must lie in [0, 1), got {mu}")
    root = np.sqrt(mu)
    if not 0.0 < eps <= 2.0 - 2.0 * root:
        raise ValueError(f"eps must lie in (0, 2 - 2 sqrt(mu)], got {eps}")
    l2 = np.asarray(history.l2_sq)  # (N+1, J), levels 0..N
    extrap = np.asarray(history.extrap_sq)  # (N, J), levels 1..N
    grad = np.asarray(history.grad_sq)  # (N, J)
    dd = np.asarray(history.second_diff_sq)  # (N-1, J)
    fdual = np.asarray(history.f_dual_sq)  # (N, J), f at levels 2..N+1... see run
    N = extrap.shape[0]
    out = []
    for j, nu_j in enumerate(nus):
        coef = (
            nu_bar
            * dt
            * (root + eps)
            / (2.0 - root)
            * (
                0.5 * root * (2.0 + eps) / (root + eps)
                - 1.5 * abs(nu_j - nu_bar) / nu_bar
            )
        )
        lhs = (
            0.25 * (l2[N, j] + extrap[N - 1, j])
            + 0.125 * (dd[:, j].sum() if dd.size else 0.0)
            + coef * grad[N - 1, j]
        )
        # the forcing sum runs over the solves that produced levels 2..N
        rhs = (
            (root + eps)
            / (2.0 * eps * (2.0 - root))
            * dt
            / nu_bar
            * (fdual[1:, j].sum() if N >= 2 else 0.0)
            + 0.25 * (l2[1, j] + extrap[0, j])
            + coef * grad[0, j]
        )
        out.append({"lhs": lhs, "rhs": rhs, "satisfied": bool(lhs <= rhs + 1e-12)})
    return out
