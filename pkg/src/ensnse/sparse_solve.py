"""Sparse direct solution of the saddle-point system: one LU factorization per
time step applied to all ensemble right-hand sides.

The coefficient matrix couples velocity, pressure and one auxiliary scalar
enforcing the zero-mean pressure gauge:

    [ c_m M + N(w) + c_nu K   B^T   0 ]   [u]   [F]
    [ B                       0     m ]   [q] = [c]
    [ 0                       m^T   0 ]   [s]   [0]

with Dirichlet velocity rows/columns eliminated and their coupling moved to
the right-hand side.  The matrix is member-independent by construction; only
right-hand sides differ across the ensemble.  The symmetric +B^T/B coupling
means the solved pressure block is the negative of the weak-form pressure
(which enters as -(p, div v)); callers negate it on extraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import dirichlet_split


class SingularMatrixError(RuntimeError):
    """The coefficient matrix could not be factorized."""


_factorization_count = 0


def factorization_count():
    """Total number of sparse LU factorizations performed by this module."""
    return _factorization_count


def reset_factorization_count():
    global _factorization_count
    _factorization_count = 0


@dataclass
class Factorization:
    """Reusable LU factorization (SuperLU with COLAMD column ordering)."""

    lu: spla.SuperLU
    n: int

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=np.float64)
        if rhs.shape[0] != self.n:
            raise ValueError(f"rhs length {rhs.shape[0]} != system size {self.n}")
        return self.lu.solve(rhs)


def factorize(A, context=""):
    """LU-factorize a sparse matrix; raises SingularMatrixError on failure."""
    global _factorization_count
    A = sp.csc_matrix(A)
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        where = f" ({context})" if context else ""
        raise SingularMatrixError(f"singular matrix{where}: {exc}") from exc
    _factorization_count += 1
    return Factorization(lu=lu, n=A.shape[0])


def solve_multi(fact, rhs_columns):
    """Solve against J right-hand sides sharing one factorization.

    ``rhs_columns`` is a sequence of J vectors or an (n, J) array; returns an
    (n, J) array.  Identical to solving one-by-one.
    """
    block = np.asarray(rhs_columns, dtype=np.float64)
    if block.ndim == 1:
        block = block[:, None]
    elif block.ndim == 2 and block.shape[0] != fact.n and block.shape[1] == fact.n:
        block = block.T
    if block.shape[0] != fact.n:
        raise ValueError(
            f"rhs length {block.shape[0]} does not match system size {fact.n}"
        )
    return fact.solve(np.ascontiguousarray(block))


class SaddleSystem:
    """Reduced saddle-point matrix with Dirichlet lifting data.

    Attributes
    ----------
    A : csr matrix, the reduced (n_free + n_p + 1) square system.
    lift : csr matrix mapping prescribed boundary values into the reduced
        equations (rhs_red = rhs[keep] - lift @ g).
    keep : retained full-system indices (velocity-free dofs, all pressure
        dofs, the gauge scalar).
    """

    def __init__(self, A, lift, keep, n_velocity, n_pressure, constrained):
        self.A = A
        self.lift = lift
        self.keep = keep
        self.n_velocity = n_velocity
        self.n_pressure = n_pressure
        self.constrained = constrained
        self.n_free = n_velocity - constrained.shape[0]

    def reduced_rhs(self, velocity_rhs, boundary_values):
        """Assemble the reduced right-hand side for one member."""
        if velocity_rhs.shape[0] != self.n_velocity:
            raise ValueError("velocity rhs length mismatch")
        full = np.concatenate([velocity_rhs, np.zeros(self.n_pressure + 1)])
        return full[self.keep] - self.lift @ boundary_values

    def split_solution(self, x, boundary_values):
        """Recover (velocity, pressure, gauge scalar) from a reduced solution."""
        u = np.empty(self.n_velocity)
        u[self.keep[: self.n_free]] = x[: self.n_free]
        u[self.constrained] = boundary_values
        q = x[self.n_free : self.n_free + self.n_pressure]
        s = x[-1]
        return u, -q, float(s)  # weak-form pressure is the negated block


def build_saddle_matrix(ops, N, mass_coeff, nu_coeff, constrained):
    """Build the reduced saddle matrix for one time level.

    Parameters
    ----------
    ops : OperatorSet with M, K, B, m on the full dof sets.
    N : convection matrix on the full velocity dofs, or None.
    mass_coeff : coefficient of M (3/(2 dt) for the two-step scheme, 1/dt for
        the bootstrap step, 0 for a steady problem).
    nu_coeff : coefficient of K (the ensemble-mean viscosity).
    constrained : velocity dof indices eliminated by Dirichlet conditions.

    The sparsity pattern is a deterministic function of the mesh and dof
    order; the member index never enters.
    """
    A_vel = nu_coeff * ops.K
    if mass_coeff != 0.0:
        A_vel = A_vel + mass_coeff * ops.M
    if N is not None:
        if N.shape != ops.K.shape:
            raise ValueError(f"convection block shape {N.shape} != {ops.K.shape}")
        A_vel = A_vel + N

    n_u = ops.M.shape[0]
    n_p = ops.B.shape[0]
    m_col = sp.csr_matrix(ops.m.reshape(-1, 1))
    full = sp.bmat(
        [
            [A_vel, ops.B.T, None],
            [ops.B, None, m_col],
            [None, m_col.T, None],
        ],
        format="csr",
    )
    constrained = np.asarray(constrained, dtype=np.int64)
    A_red, lift, keep = dirichlet_split(full, constrained, n=n_u + n_p + 1)
    return SaddleSystem(A_red, lift, keep, n_u, n_p, constrained)
