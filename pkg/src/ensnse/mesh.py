"""Conforming triangulations of the unit square and the offset-circle annulus.

A mesh is a set of vertices, counterclockwise triangles and marked boundary
edges.  Generators produce structured meshes that are deterministic functions
of their parameters, so repeated runs are bit-reproducible.  The ASCII file
format round-trips coordinates exactly (17 significant digits).
"""

from __future__ import annotations

import math

import numpy as np

OUTER_RADIUS = 1.0
INNER_RADIUS = 0.1
INNER_CENTER = (0.5, 0.0)

MARKER_OUTER = 1
MARKER_INNER = 2


class MeshError(ValueError):
    """A mesh violates a structural invariant."""


class MeshQualityError(MeshError):
    """A triangle is degenerate or inverted (non-positive signed area)."""

    def __init__(self, message, triangle=None):
        super().__init__(message)
        self.triangle = triangle


class MeshFormatError(MeshError):
    """A mesh file cannot be parsed or describes an invalid mesh."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class Mesh:
    """Immutable conforming triangulation.

    Parameters
    ----------
    vertices : (V, 2) float array
        Vertex coordinates.
    triangles : (T, 3) int array
        Vertex index triples, counterclockwise.
    boundary_edges : (B, 3) int array
        Rows ``(i, j, marker)``; the (i, j) pairs must be exactly the
        topological boundary edges of the triangulation.

    Construction validates orientation, edge-to-edge conformity and boundary
    markers, and computes ``h_max`` (longest edge) and ``min_angle`` (degrees).
    """

    def __init__(self, vertices, triangles, boundary_edges):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(boundary_edges, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (V, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be a (T, 3) array")
        if self.boundary_edges.ndim != 2 or self.boundary_edges.shape[1] != 3:
            raise MeshError("boundary_edges must be a (B, 3) array")
        self._validate()
        self.h_max = float(np.sqrt(self._edge_lengths_sq().max()))
        self.min_angle = float(self._min_angle_deg())

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def signed_areas(self):
        """Signed area of every triangle (positive for counterclockwise)."""
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def all_edges(self):
        """Unique edges as sorted (min, max) vertex pairs, lexicographic order."""
        tri = self.triangles
        raw = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        raw.sort(axis=1)
        return np.unique(raw, axis=0)

    def _edge_lengths_sq(self):
        edges = self.all_edges()
        d = self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]]
        return np.einsum("ij,ij->i", d, d)

    def _min_angle_deg(self):
        p = self.vertices[self.triangles]
        angles = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            na = np.linalg.norm(a, axis=1)
            nb = np.linalg.norm(b, axis=1)
            cosang = np.einsum("ij,ij->i", a, b) / (na * nb)
            angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
        return np.min(angles)

    def _validate(self):
        V = self.n_vertices
        tri = self.triangles
        if tri.size and (tri.min() < 0 or tri.max() >= V):
            raise MeshError("triangle vertex index out of range")
        if self.boundary_edges.size and (
            self.boundary_edges[:, :2].min() < 0
            or self.boundary_edges[:, :2].max() >= V
        ):
            raise MeshError("boundary edge vertex index out of range")

        areas = self.signed_areas()
        bad = np.flatnonzero(areas <= 1e-14)
        if bad.size:
            t = int(bad[0])
            raise MeshQualityError(
                f"triangle {t} {tuple(tri[t])} has non-positive area {areas[t]:.3e}",
                triangle=t,
            )

        # edge-to-edge conformity: interior edges in 2 triangles, boundary in 1
        raw = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        raw.sort(axis=1)
        edges, counts = np.unique(raw, axis=0, return_counts=True)
        if counts.max(initial=0) > 2:
            raise MeshError("nonconforming mesh: an edge is shared by >2 triangles")
        topo_boundary = edges[counts == 1]

        marked = np.array(self.boundary_edges[:, :2], copy=True)
        marked.sort(axis=1)
        order = np.lexsort((marked[:, 1], marked[:, 0]))
        marked = marked[order]
        if marked.shape[0] != np.unique(marked, axis=0).shape[0]:
            raise MeshError("duplicate boundary edge")
        if marked.shape != topo_boundary.shape or not np.array_equal(
            marked, topo_boundary
        ):
            raise MeshError(
                "boundary edge list does not match the topological boundary"
            )


def gen_unit_square(n):
    """Structured mesh of [0, 1]^2 with n cells per side.

    Each grid cell is split along its lower-left to upper-right diagonal,
    giving (n+1)^2 vertices and 2 n^2 triangles with h_max = sqrt(2)/n.
    All boundary edges carry marker 1.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    xs = np.arange(n + 1) / n
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(ix, iy):
        return iy * (n + 1) + ix

    triangles = []
    for iy in range(n):
        for ix in range(n):
            a = vid(ix, iy)
            b = vid(ix + 1, iy)
            c = vid(ix + 1, iy + 1)
            d = vid(ix, iy + 1)
            triangles.append((a, b, c))
            triangles.append((a, c, d))

    boundary = []
    for ix in range(n):
        boundary.append((vid(ix, 0), vid(ix + 1, 0), MARKER_OUTER))
        boundary.append((vid(ix, n), vid(ix + 1, n), MARKER_OUTER))
    for iy in range(n):
        boundary.append((vid(0, iy), vid(0, iy + 1), MARKER_OUTER))
        boundary.append((vid(n, iy), vid(n, iy + 1), MARKER_OUTER))

    return Mesh(vertices, np.array(triangles), np.array(boundary))


def gen_offset_annulus(n_outer=80, n_inner=60, n_rings=25, grading=0.85):
    """Structured mesh of the unit disk with an off-center circular hole.

    The domain is { |x| <= 1 } minus the open disk of radius 0.1 centered at
    (1/2, 0).  For each angle sampled around the inner center, a line of
    radial nodes interpolates between the inner-circle point and the point
    where that ray exits the outer circle.  ``grading`` in (0, 1] is the
    geometric ratio of consecutive ring thicknesses (inner thinnest); 1 gives
    uniform rings.  The tensor grid uses max(n_outer, n_inner) angular
    samples on both circles.

    Outer boundary edges carry marker 1, inner boundary edges marker 2.
    """
    if not isinstance(n_outer, (int, np.integer)) or n_outer < 8:
        raise ValueError(f"n_outer must be an integer >= 8, got {n_outer!r}")
    if not isinstance(n_inner, (int, np.integer)) or n_inner < 8:
        raise ValueError(f"n_inner must be an integer >= 8, got {n_inner!r}")
    if not isinstance(n_rings, (int, np.integer)) or n_rings < 2:
        raise ValueError(f"n_rings must be an integer >= 2, got {n_rings!r}")
    if not (0.0 < grading <= 1.0):
        raise ValueError(f"grading must lie in (0, 1], got {grading!r}")

    n_theta = int(max(n_outer, n_inner))
    n_rings = int(n_rings)
    cx, cy = INNER_CENTER
    c2 = cx * cx + cy * cy

    thetas = 2.0 * np.pi * np.arange(n_theta) / n_theta
    d = np.column_stack([np.cos(thetas), np.sin(thetas)])
    # ray c + t*d exits the outer circle at the positive root of |c + t d| = 1
    proj = d[:, 0] * cx + d[:, 1] * cy
    t_out = -proj + np.sqrt(proj * proj + (OUTER_RADIUS**2 - c2))
    inner_pts = np.array([cx, cy]) + INNER_RADIUS * d
    outer_pts = np.array([cx, cy]) + t_out[:, None] * d

    if grading == 1.0:
        s = np.arange(n_rings + 1) / n_rings
    else:
        rho = 1.0 / grading  # thickness ratio between consecutive rings
        s = (rho ** np.arange(n_rings + 1) - 1.0) / (rho**n_rings - 1.0)

    # vertex (ring k, angle i) -> index k*n_theta + i
    verts = (
        inner_pts[None, :, :]
        + s[:, None, None] * (outer_pts - inner_pts)[None, :, :]
    )
    vertices = verts.reshape(-1, 2)

    triangles = []
    for k in range(n_rings):
        base0 = k * n_theta
        base1 = (k + 1) * n_theta
        for i in range(n_theta):
            ip = (i + 1) % n_theta
            a = base0 + i  # (ring k, theta_i)
            b = base0 + ip
            cc = base1 + ip
            dd = base1 + i
            # counterclockwise quad is a -> dd -> cc -> b; split along a-cc
            triangles.append((a, dd, cc))
            triangles.append((a, cc, b))

    boundary = []
    for i in range(n_theta):
        ip = (i + 1) % n_theta
        boundary.append((i, ip, MARKER_INNER))
        outer_base = n_rings * n_theta
        boundary.append((outer_base + i, outer_base + ip, MARKER_OUTER))

    return Mesh(vertices, np.array(triangles), np.array(boundary))


def mesh_stats(mesh):
    """Basic mesh metrics as a plain dict."""
    return {
        "h_max": mesh.h_max,
        "min_angle": mesh.min_angle,
        "n_vertices": mesh.n_vertices,
        "n_triangles": mesh.n_triangles,
        "n_boundary_edges": int(mesh.boundary_edges.shape[0]),
    }


def write_mesh(mesh, path):
    """Write a mesh in the line-oriented ASCII format (exact round-trip)."""
    with open(path, "w") as fh:
        fh.write("emesh 1\n")
        fh.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"triangles {mesh.n_triangles}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
        fh.write(f"boundary {mesh.boundary_edges.shape[0]}\n")
        for i, j, m in mesh.boundary_edges:
            fh.write(f"{i} {j} {m}\n")


def read_mesh(path):
    """Read a mesh file, validating structure; raises MeshFormatError."""
    with open(path) as fh:
        lines = fh.read().splitlines()

    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise MeshFormatError("unexpected end of file", line=len(lines))
        pos += 1
        return lines[pos - 1].strip(), pos

    header, ln = next_line()
    if header.split() != ["emesh", "1"]:
        raise MeshFormatError(f"bad header {header!r}, expected 'emesh 1'", line=ln)

    def read_count(keyword):
        text, ln = next_line()
        parts = text.split()
        if len(parts) != 2 or parts[0] != keyword:
            raise MeshFormatError(f"expected '{keyword} <count>', got {text!r}", line=ln)
        try:
            count = int(parts[1])
        except ValueError:
            raise MeshFormatError(f"bad count {parts[1]!r}", line=ln) from None
        if count < 0:
            raise MeshFormatError(f"negative count {count}", line=ln)
        return count

    nv = read_count("vertices")
    vertices = np.empty((nv, 2))
    for i in range(nv):
        text, ln = next_line()
        parts = text.split()
        if len(parts) != 2:
            raise MeshFormatError(f"expected 2 coordinates, got {text!r}", line=ln)
        try:
            vertices[i] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise MeshFormatError(f"bad coordinate in {text!r}", line=ln) from None

    nt = read_count("triangles")
    triangles = np.empty((nt, 3), dtype=np.int64)
    for i in range(nt):
        text, ln = next_line()
        parts = text.split()
        if len(parts) != 3:
            raise MeshFormatError(f"expected 3 vertex indices, got {text!r}", line=ln)
        try:
            triangles[i] = [int(p) for p in parts]
        except ValueError:
            raise MeshFormatError(f"bad index in {text!r}", line=ln) from None
        if triangles[i].min() < 0 or triangles[i].max() >= nv:
            raise MeshFormatError(
                f"triangle index out of range in {text!r}", line=ln
            )

    nb = read_count("boundary")
    boundary = np.empty((nb, 3), dtype=np.int64)
    for i in range(nb):
        text, ln = next_line()
        parts = text.split()
        if len(parts) != 3:
            raise MeshFormatError(f"expected 'i j marker', got {text!r}", line=ln)
        try:
            boundary[i] = [int(p) for p in parts]
        except ValueError:
            raise MeshFormatError(f"bad value in {text!r}", line=ln) from None
        if boundary[i, :2].min() < 0 or boundary[i, :2].max() >= nv:
            raise MeshFormatError(
                f"boundary vertex index out of range in {text!r}", line=ln
            )

    while pos < len(lines):
        if lines[pos].strip():
            raise MeshFormatError(f"trailing content {lines[pos]!r}", line=pos + 1)
        pos += 1

    try:
        return Mesh(vertices, triangles, boundary)
    except MeshError as exc:
        raise MeshFormatError(f"invalid mesh: {exc}") from exc
