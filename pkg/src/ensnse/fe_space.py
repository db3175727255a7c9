"""Taylor-Hood P2-P1 spaces: dof maps, reference bases, quadrature, interpolation.

Scalar P2 dofs are numbered vertices first, then edge midpoints with edges in
lexicographically sorted (min, max) vertex-index order, so the numbering is a
deterministic function of the mesh.  Vector velocity fields use a
component-blocked layout: the x-component occupies dofs [0, n_scalar) and the
y-component [n_scalar, 2*n_scalar).  Pressure dofs are the P1 vertex dofs.
Coefficient vectors are plain 1-D numpy arrays in these layouts.
"""

from __future__ import annotations

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

# local P2 node order: 3 vertices, then midpoints of edges (0,1), (1,2), (2,0)
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


def p2_reference(points):
    """Quadratic Lagrange basis on the reference triangle.

    Parameters
    ----------
    points : (n, 2) array of (xi, eta) reference coordinates.

    Returns
    -------
    vals : (n, 6) basis values.
    grads : (n, 6, 2) reference gradients.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    xi, eta = pts[:, 0], pts[:, 1]
    lam = np.stack([1.0 - xi - eta, xi, eta], axis=1)  # (n, 3)
    grad_lam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])

    n = pts.shape[0]
    vals = np.empty((n, 6))
    grads = np.empty((n, 6, 2))
    for i in range(3):
        vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * grad_lam[i]
    for e, (i, j) in enumerate(LOCAL_EDGES):
        vals[:, 3 + e] = 4.0 * lam[:, i] * lam[:, j]
        grads[:, 3 + e, :] = 4.0 * (
            lam[:, j][:, None] * grad_lam[i] + lam[:, i][:, None] * grad_lam[j]
        )
    return vals, grads


def p1_reference(points):
    """Linear (barycentric) basis on the reference triangle."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    xi, eta = pts[:, 0], pts[:, 1]
    vals = np.stack([1.0 - xi - eta, xi, eta], axis=1)
    grads = np.broadcast_to(
        np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (pts.shape[0], 3, 2)
    ).copy()
    return vals, grads


def eval_basis(points):
    """Values and gradients of the 6 P2 and 3 P1 reference basis functions."""
    p2v, p2g = p2_reference(points)
    p1v, p1g = p1_reference(points)
    return p2v, p2g, p1v, p1g


class QuadratureRule:
    """Quadrature on the reference triangle; weights sum to 1.

    ``integrate f over a physical triangle T`` is approximated by
    ``area(T) * sum_q weights[q] * f(x_q)``.  The rule is exact for all
    bivariate polynomials up to ``degree``.
    """

    def __init__(self, points_bary, weights, degree):
        self.points_bary = points_bary  # (n, 3)
        self.weights = weights  # (n,), sum to 1
        self.degree = degree

    @property
    def points(self):
        """(n, 2) reference (xi, eta) coordinates."""
        return self.points_bary[:, 1:]

    def __len__(self):
        return self.weights.shape[0]


def quadrature_rule(degree):
    """Collapsed Gauss-Legendre x Gauss-Jacobi product rule of given exactness.

    Supports degrees 1..7 (higher degrees would work but are not part of the
    supported surface).
    """
    if not isinstance(degree, (int, np.integer)) or not 1 <= degree <= 7:
        raise ValueError(f"unsupported quadrature degree {degree!r} (need 1..7)")
    n = (int(degree) + 2) // 2
    xs, ws = roots_legendre(n)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    s = (xs + 1.0) / 2.0
    t = (xj + 1.0) / 2.0
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws / 2.0, wj / 4.0)
    xi = (S * (1.0 - T)).ravel()
    eta = T.ravel()
    w = 2.0 * W.ravel()  # normalize: reference triangle has area 1/2
    bary = np.column_stack([1.0 - xi - eta, xi, eta])
    return QuadratureRule(bary, w, int(degree))


class ElementData:
    """Per-(space, quadrature degree) cache of element-level arrays.

    Attributes
    ----------
    rule : QuadratureRule
    phi2 : (nq, 6) P2 values at quadrature points.
    grad2 : (T, nq, 6, 2) physical P2 gradients.
    phi1 : (nq, 3) P1 values.
    qpoints : (T, nq, 2) physical quadrature point coordinates.
    """

    def __init__(self, space, degree):
        rule = quadrature_rule(degree)
        p2v, p2g = p2_reference(rule.points)
        p1v, _ = p1_reference(rule.points)
        self.rule = rule
        self.phi2 = p2v
        self.phi1 = p1v
        # physical gradient: J^{-T} @ reference gradient, per element
        self.grad2 = np.einsum("eij,qkj->eqki", space.inv_jac_t, p2g)
        verts0 = space.mesh.vertices[space.mesh.triangles[:, 0]]
        self.qpoints = (
            verts0[:, None, :]
            + np.einsum("eij,qj->eqi", space.jacobians, rule.points)
        )


class FunctionSpacePair:
    """P2 velocity / P1 pressure dof maps over a mesh (built by build_taylor_hood)."""

    def __init__(self, mesh):
        self.mesh = mesh
        tri = mesh.triangles
        V = mesh.n_vertices

        raw = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        raw.sort(axis=1)
        edges, inverse = np.unique(raw, axis=0, return_inverse=True)
        self.edges = edges  # (E, 2), lexicographic order
        T = tri.shape[0]
        self.tri_edges = inverse.reshape(3, T).T  # (T, 3) per LOCAL_EDGES order

        self.n_scalar = V + edges.shape[0]
        self.n_velocity = 2 * self.n_scalar
        self.n_pressure = V
        self.edge_midpoints = 0.5 * (
            mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]]
        )
        # scalar P2 dofs per element: [v0, v1, v2, m01, m12, m20]
        self.p2_cells = np.concatenate([tri, V + self.tri_edges], axis=1)
        self.p1_cells = tri

        p = mesh.vertices[tri]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        self.jacobians = np.stack([d1, d2], axis=2)  # (T, 2, 2), columns d1|d2
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.areas = 0.5 * det
        inv = np.empty_like(self.jacobians)
        inv[:, 0, 0] = d2[:, 1] / det
        inv[:, 0, 1] = -d2[:, 0] / det
        inv[:, 1, 0] = -d1[:, 1] / det
        inv[:, 1, 1] = d1[:, 0] / det
        self.inv_jac_t = np.transpose(inv, (0, 2, 1))

        # boundary scalar nodes per marker: edge endpoints plus edge midpoints
        edge_lookup = {tuple(e): k for k, e in enumerate(edges)}
        per_marker: dict[int, set[int]] = {}
        for i, j, m in mesh.boundary_edges:
            i, j, m = int(i), int(j), int(m)
            nodes = per_marker.setdefault(m, set())
            nodes.add(i)
            nodes.add(j)
            nodes.add(V + edge_lookup[(min(i, j), max(i, j))])
        self.boundary_scalar_nodes = {
            m: np.array(sorted(nodes), dtype=np.int64)
            for m, nodes in sorted(per_marker.items())
        }
        self._element_data: dict[int, ElementData] = {}

    @property
    def markers(self):
        return sorted(self.boundary_scalar_nodes)

    def node_coords(self):
        """Coordinates of all scalar P2 nodes (vertices then edge midpoints)."""
        return np.concatenate([self.mesh.vertices, self.edge_midpoints])

    def element_data(self, degree):
        data = self._element_data.get(degree)
        if data is None:
            data = ElementData(self, degree)
            self._element_data[degree] = data
        return data


def build_taylor_hood(mesh):
    """Build the P2-P1 Taylor-Hood dof maps for a conforming mesh."""
    return FunctionSpacePair(mesh)


def boundary_scalar_nodes(space, marker=None):
    """Scalar P2 node indices lying on boundary edges of the given marker.

    ``marker=None`` returns the union over all markers.
    """
    if marker is None:
        if not space.boundary_scalar_nodes:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(list(space.boundary_scalar_nodes.values())))
    if marker not in space.boundary_scalar_nodes:
        raise ValueError(
            f"unknown boundary marker {marker!r}; mesh has {space.markers}"
        )
    return space.boundary_scalar_nodes[marker]


def boundary_dofs(space, marker=None):
    """Velocity dof indices (both components) on the given boundary marker."""
    nodes = boundary_scalar_nodes(space, marker)
    return np.concatenate([nodes, space.n_scalar + nodes])


def _eval_field(field, x, y, t, ncomp):
    """Evaluate an analytic field; returns (ncomp, n) with broadcast scalars."""
    out = field(x, y, t)
    if ncomp == 1:
        comps = [out]
    else:
        comps = list(out)
        if len(comps) != ncomp:
            raise ValueError(f"field returned {len(comps)} components, need {ncomp}")
    res = np.empty((ncomp, x.shape[0]))
    for c, comp in enumerate(comps):
        res[c] = np.broadcast_to(np.asarray(comp, dtype=np.float64), x.shape)
    return res


def interpolate(space, field, t=0.0, ncomp=2):
    """Nodal interpolation of an analytic field.

    ``field(x, y, t)`` is called with coordinate arrays and must return
    ``ncomp`` components (a tuple for vector fields, an array for scalars).
    Vector fields are interpolated at vertex and edge-midpoint nodes (P2),
    scalars at vertices (P1).  Returns a flat coefficient vector.
    """
    if ncomp == 2:
        coords = space.node_coords()
        vals = _eval_field(field, coords[:, 0], coords[:, 1], t, 2)
        return np.concatenate([vals[0], vals[1]])
    if ncomp == 1:
        coords = space.mesh.vertices
        return _eval_field(field, coords[:, 0], coords[:, 1], t, 1)[0]
    raise ValueError(f"ncomp must be 1 or 2, got {ncomp}")


def boundary_values(space, field, t, marker=None):
    """Interpolated field values on boundary velocity dofs.

    Returns (dofs, values) with dofs ordered as in boundary_dofs(space, marker).
    """
    nodes = boundary_scalar_nodes(space, marker)
    coords = space.node_coords()[nodes]
    vals = _eval_field(field, coords[:, 0], coords[:, 1], t, 2)
    dofs = np.concatenate([nodes, space.n_scalar + nodes])
    return dofs, np.concatenate([vals[0], vals[1]])
