"""Discrete operators of the weak form: mass, diffusion, divergence coupling,
skew-symmetric convection, load vectors and Dirichlet elimination.

Velocity operators act on component-blocked coefficient vectors of length
``space.n_velocity`` and are block-diagonal over the two components where the
weak form decouples them.  The convection matrix realizes the explicitly
skew-symmetric trilinear form

    b*(w, v, z) = 1/2 (w . grad v, z) - 1/2 (w . grad z, v),

assembled as an exact half-difference so N(w) + N(w)^T vanishes identically.
All assembly uses a fixed-degree quadrature rule (default 5, which integrates
the P2 x P2 x grad-P2 integrand exactly on affine triangles) and is a
deterministic function of the mesh and dof order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

DEFAULT_DEGREE = 5


def _scatter_matrix(vals, rows_map, cols_map, shape):
    """Accumulate per-element local blocks into a CSR matrix.

    vals : (T, a, b) local blocks; rows_map (T, a); cols_map (T, b).
    """
    T, a, b = vals.shape
    rows = np.repeat(rows_map, b).reshape(T, a, b)
    cols = np.repeat(cols_map, a, axis=0).reshape(T, a, b)
    mat = sp.coo_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape
    )
    return mat.tocsr()


def _scalar_mass(space, degree):
    data = space.element_data(degree)
    w = data.rule.weights
    m_ref = np.einsum("q,qi,qk->ik", w, data.phi2, data.phi2)
    vals = space.areas[:, None, None] * m_ref
    n = space.n_scalar
    return _scatter_matrix(vals, space.p2_cells, space.p2_cells, (n, n))


def _scalar_diffusion(space, degree):
    data = space.element_data(degree)
    w = data.rule.weights
    vals = np.einsum("q,eqid,eqkd->eik", w, data.grad2, data.grad2)
    vals *= space.areas[:, None, None]
    n = space.n_scalar
    return _scatter_matrix(vals, space.p2_cells, space.p2_cells, (n, n))


def _block_diag2(A):
    return sp.block_diag((A, A), format="csr")


def assemble_mass(space, degree=DEFAULT_DEGREE):
    """Velocity mass matrix, block-diagonal over components."""
    return _block_diag2(_scalar_mass(space, degree))


def assemble_diffusion(space, degree=DEFAULT_DEGREE):
    """Velocity diffusion matrix (grad, grad) per component."""
    return _block_diag2(_scalar_diffusion(space, degree))


def assemble_divergence(space, degree=DEFAULT_DEGREE):
    """Divergence coupling B with B[q, i] = (psi_q, d/dx_c phi_i) per component c."""
    data = space.element_data(degree)
    w = data.rule.weights
    n_s, n_p = space.n_scalar, space.n_pressure
    blocks = []
    for comp in range(2):
        vals = np.einsum("q,qa,eqi->eai", w, data.phi1, data.grad2[..., comp])
        vals *= space.areas[:, None, None]
        blocks.append(
            _scatter_matrix(vals, space.p1_cells, space.p2_cells, (n_p, n_s))
        )
    return sp.hstack(blocks, format="csr")


def assemble_pressure_mean(space, degree=DEFAULT_DEGREE):
    """Weights m with m[q] = integral of pressure basis psi_q (so m.p = int p)."""
    data = space.element_data(degree)
    w = data.rule.weights
    vals = space.areas[:, None] * np.einsum("q,qa->a", w, data.phi1)[None, :]
    m = np.zeros(space.n_pressure)
    np.add.at(m, space.p1_cells.ravel(), vals.ravel())
    return m


def _velocity_at_qpoints(space, data, u):
    """Values of a velocity coefficient vector at quadrature points: (T, nq, 2)."""
    n_s = space.n_scalar
    if u.shape != (space.n_velocity,):
        raise ValueError(
            f"velocity vector has length {u.shape}, space needs {space.n_velocity}"
        )
    ux = u[:n_s][space.p2_cells]  # (T, 6)
    uy = u[n_s:][space.p2_cells]
    vals = np.empty(space.p2_cells.shape[:1] + (len(data.rule), 2))
    vals[..., 0] = np.einsum("ek,qk->eq", ux, data.phi2)
    vals[..., 1] = np.einsum("ek,qk->eq", uy, data.phi2)
    return vals


def assemble_convection(space, w_coeffs, degree=DEFAULT_DEGREE):
    """Skew-symmetric convection matrix N(w) with entries b*(w_h, phi_k, phi_i).

    Block-diagonal over components (the form never couples components for a
    component-wise vector basis).
    """
    data = space.element_data(degree)
    wgt = data.rule.weights
    wq = _velocity_at_qpoints(space, data, w_coeffs)  # (T, nq, 2)
    adv = np.einsum("eqd,eqkd->eqk", wq, data.grad2)  # (w . grad phi_k)(x_q)
    C = np.einsum("q,qi,eqk->eik", wgt, data.phi2, adv)
    C *= space.areas[:, None, None]
    N_loc = 0.5 * (C - np.transpose(C, (0, 2, 1)))
    n = space.n_scalar
    N_s = _scatter_matrix(N_loc, space.p2_cells, space.p2_cells, (n, n))
    return _block_diag2(N_s)


def trilinear_action(space, a_coeffs, b_coeffs, degree=DEFAULT_DEGREE):
    """Vector r with r_i = b*(a_h, b_h, phi_i); equals N(a) @ b."""
    data = space.element_data(degree)
    wgt = data.rule.weights
    aq = _velocity_at_qpoints(space, data, a_coeffs)  # (T, nq, 2)
    bq = _velocity_at_qpoints(space, data, b_coeffs)
    n_s = space.n_scalar
    bx = b_coeffs[:n_s][space.p2_cells]
    by = b_coeffs[n_s:][space.p2_cells]
    gradb = np.empty(aq.shape[:2] + (2, 2))  # (T, nq, comp, deriv)
    gradb[:, :, 0, :] = np.einsum("ek,eqkd->eqd", bx, data.grad2)
    gradb[:, :, 1, :] = np.einsum("ek,eqkd->eqd", by, data.grad2)

    adv_b = np.einsum("eqd,eqcd->eqc", aq, gradb)  # (a . grad b)_c
    adv_phi = np.einsum("eqd,eqkd->eqk", aq, data.grad2)  # (a . grad phi_k)
    r1 = np.einsum("q,qk,eqc->ekc", wgt, data.phi2, adv_b)
    r2 = np.einsum("q,eqk,eqc->ekc", wgt, adv_phi, bq)
    r_loc = 0.5 * (r1 - r2) * space.areas[:, None, None]

    r = np.zeros(space.n_velocity)
    np.add.at(r, space.p2_cells.ravel(), r_loc[..., 0].ravel())
    np.add.at(r, (n_s + space.p2_cells).ravel(), r_loc[..., 1].ravel())
    return r


def assemble_load(space, f, t, degree=DEFAULT_DEGREE):
    """Load vector F_i = (f(., t), phi_i) by quadrature of the analytic field."""
    data = space.element_data(degree)
    wgt = data.rule.weights
    x = data.qpoints[..., 0].ravel()
    y = data.qpoints[..., 1].ravel()
    out = f(x, y, t)
    fvals = np.empty(data.qpoints.shape)  # (T, nq, 2)
    for c in range(2):
        fvals[..., c] = np.broadcast_to(
            np.asarray(out[c], dtype=np.float64), x.shape
        ).reshape(data.qpoints.shape[:2])
    loc = np.einsum("q,qk,eqc->ekc", wgt, data.phi2, fvals)
    loc *= space.areas[:, None, None]
    F = np.zeros(space.n_velocity)
    np.add.at(F, space.p2_cells.ravel(), loc[..., 0].ravel())
    np.add.at(F, (space.n_scalar + space.p2_cells).ravel(), loc[..., 1].ravel())
    return F


@dataclass
class OperatorSet:
    """Time-invariant operators on the full (unconstrained) dof sets."""

    M: sp.csr_matrix  # velocity mass
    K: sp.csr_matrix  # velocity diffusion
    B: sp.csr_matrix  # divergence coupling (n_pressure x n_velocity)
    m: np.ndarray  # pressure mean-value weights (n_pressure,)
    degree: int


def build_operator_set(space, degree=DEFAULT_DEGREE):
    return OperatorSet(
        M=assemble_mass(space, degree),
        K=assemble_diffusion(space, degree),
        B=assemble_divergence(space, degree),
        m=assemble_pressure_mean(space, degree),
        degree=degree,
    )


def dirichlet_split(A, constrained, n=None):
    """Split a square system for elimination of constrained dofs.

    Returns ``(A_red, lift, keep)`` where ``A_red = A[keep][:, keep]``,
    ``lift = A[keep][:, constrained]`` carries the coupling of the
    constrained columns into the kept equations, and ``keep`` is the sorted
    array of retained indices.  The reduced right-hand side for prescribed
    values ``g`` is ``rhs[keep] - lift @ g``.
    """
    n = A.shape[0] if n is None else n
    constrained = np.asarray(constrained, dtype=np.int64)
    mask = np.ones(n, dtype=bool)
    mask[constrained] = False
    keep = np.flatnonzero(mask)
    A = A.tocsr()
    rows = A[keep]
    return rows[:, keep], rows[:, constrained], keep


def apply_dirichlet(A, rhs, constrained, values):
    """Eliminate Dirichlet rows/columns with lifting.

    Parameters
    ----------
    A : sparse square matrix on the full dof set.
    rhs : (n,) or (n, k) right-hand side(s).
    constrained : indices of prescribed dofs.
    values : prescribed values, shape (len(constrained),) or (len(constrained), k).

    Returns
    -------
    A_red, rhs_red, keep : reduced system and the retained index array.  A full
    solution is recovered by placing the reduced solution at ``keep`` and
    ``values`` at ``constrained``.
    """
    constrained = np.asarray(constrained, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != constrained.shape[0]:
        raise ValueError(
            f"{values.shape[0]} boundary values for {constrained.shape[0]} dofs"
        )
    A_red, lift, keep = dirichlet_split(A, constrained)
    rhs = np.asarray(rhs, dtype=np.float64)
    rhs_red = rhs[keep] - lift @ values
    return A_red, rhs_red, keep
