"""
Triangular meshes: generation, validation, normals and plain-text IO.

A mesh is nodes + CCW triangles + marked boundary edges.  The hold-all box
is the node bounding box inflated by 25% per axis; transported meshes are
expected to stay inside it and vector fields of interest are supported there.

File format (``shapegrad-mesh v1``)::

    shapegrad-mesh v1
    nodes N
    <x> <y>          (N lines, shortest round-trip decimals)
    triangles M
    <i> <j> <k>      (M lines, 0-based, CCW)
    boundary B
    <i> <j> <marker> (B lines, 0-based, oriented with the domain on the left)
"""

import os
import tempfile

import numpy as np


class MeshFormatError(Exception):
    """Raised by :func:`load_mesh` on malformed files; message carries the line number."""


class MeshValidationError(Exception):
    """Raised when mesh data violates a structural invariant; message names it."""


def _signed_areas(nodes, triangles):
    p = nodes[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


class Mesh:
    """Validated triangular mesh.

    Parameters
    ----------
    nodes : (N, 2) float array
    triangles : (M, 3) int array
        Vertex indices, counter-clockwise.
    boundary_edges : (B, 3) int array
        Rows ``(a, b, marker)``; the segment a->b lies on the boundary with
        the domain on its left.
    holdall_box : (2, 2) float array, optional
        ``[[xlo, ylo], [xhi, yhi]]``.  Defaults to the node bounding box
        inflated by 25% of each extent per side.
    """

    def __init__(self, nodes, triangles, boundary_edges, holdall_box=None):
        self.nodes = np.ascontiguousarray(nodes, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(boundary_edges, dtype=np.int64)
        if holdall_box is None:
            lo = self.nodes.min(axis=0)
            hi = self.nodes.max(axis=0)
            margin = 0.25 * np.maximum(hi - lo, 1e-12)
            holdall_box = np.array([lo - margin, hi + margin])
        self.holdall_box = np.asarray(holdall_box, dtype=float)
        self._owner_of_boundary_edge = None
        self._validate()

    # ------------------------------------------------------------ validation

    def _validate(self):
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise MeshValidationError("node array shape: expected (N, 2)")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshValidationError("finite node coordinates: non-finite entry")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshValidationError("triangle array shape: expected (M, 3)")
        if self.boundary_edges.ndim != 2 or self.boundary_edges.shape[1] != 3:
            raise MeshValidationError("boundary array shape: expected (B, 3)")
        n = len(self.nodes)
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=-1) >= n:
            raise MeshValidationError("triangle vertex indices in range")
        if len(self.boundary_edges) and (
                self.boundary_edges[:, :2].min() < 0 or self.boundary_edges[:, :2].max() >= n):
            raise MeshValidationError("boundary vertex indices in range")

        areas = _signed_areas(self.nodes, self.triangles)
        bad = np.nonzero(areas <= 0.0)[0]
        if len(bad):
            raise MeshValidationError(
                f"positive triangle orientation: triangle {bad[0]} has signed area {areas[bad[0]]:.3e}")

        # every triangulation edge with a single owner must be listed exactly once
        owners = {}
        for t, tri in enumerate(self.triangles):
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                owners.setdefault(key, []).append(t)
        listed = {}
        for e, (a, b, _m) in enumerate(self.boundary_edges):
            key = (min(a, b), max(a, b))
            if key in listed:
                raise MeshValidationError(f"boundary edges listed once: edge {e} duplicates edge {listed[key]}")
            listed[key] = e
        hull = {k for k, v in owners.items() if len(v) == 1}
        for key, e in listed.items():
            if key not in owners:
                raise MeshValidationError(
                    f"boundary edges belong to one triangle: edge {e} matches no triangle edge")
            if len(owners[key]) != 1:
                raise MeshValidationError(
                    f"boundary edges belong to one triangle: edge {e} is shared by {len(owners[key])} triangles")
        missing = hull - set(listed)
        if missing:
            a, b = sorted(missing)[0]
            raise MeshValidationError(
                f"boundary edges cover the mesh boundary: hull edge ({a}, {b}) is not listed")

        # closed loops: every touched node has exactly two incident boundary edges
        if len(self.boundary_edges):
            deg = np.zeros(n, dtype=int)
            np.add.at(deg, self.boundary_edges[:, 0], 1)
            np.add.at(deg, self.boundary_edges[:, 1], 1)
            touched = np.nonzero(deg)[0]
            odd = touched[deg[touched] != 2]
            if len(odd):
                raise MeshValidationError(
                    f"boundary edges form closed loops: node {odd[0]} has boundary degree {deg[odd[0]]}")

        lo, hi = self.holdall_box
        if (self.nodes <= lo).any() or (self.nodes >= hi).any():
            raise MeshValidationError("nodes strictly inside the hold-all box")

        self._areas = areas
        self._edge_owner = {k: v[0] for k, v in owners.items() if len(v) == 1}

    # ------------------------------------------------------------- accessors

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def areas(self):
        """Signed triangle areas (all positive for a valid mesh)."""
        return self._areas.copy()

    def area(self):
        """Total mesh area."""
        return float(self._areas.sum())

    def boundary_edge_owner(self, edge_index):
        """Index of the unique triangle containing boundary edge ``edge_index``."""
        a, b, _ = self.boundary_edges[edge_index]
        return self._edge_owner[(min(a, b), max(a, b))]

    def with_nodes(self, nodes):
        """Same connectivity on new node positions (keeps this mesh's hold-all)."""
        return Mesh(nodes, self.triangles, self.boundary_edges, holdall_box=self.holdall_box)


def outward_normal(mesh, edge_index):
    """Unit outward normal of a boundary edge.

    The normal is perpendicular to the edge and points away from the
    centroid of the unique triangle containing it.

    Parameters
    ----------
    mesh : Mesh
    edge_index : int
        Index into ``mesh.boundary_edges``; anything else is rejected.
    """
    if not 0 <= edge_index < len(mesh.boundary_edges):
        raise ValueError(f"edge index {edge_index} is not a boundary edge index")
    a, b, _ = mesh.boundary_edges[edge_index]
    pa, pb = mesh.nodes[a], mesh.nodes[b]
    t = pb - pa
    n = np.array([t[1], -t[0]])
    n /= np.hypot(n[0], n[1])
    tri = mesh.triangles[mesh.boundary_edge_owner(edge_index)]
    centroid = mesh.nodes[tri].mean(axis=0)
    if np.dot(n, 0.5 * (pa + pb) - centroid) < 0.0:
        n = -n
    return n


def outward_normals(mesh):
    """Outward normals of all boundary edges, shape (B, 2)."""
    return np.array([outward_normal(mesh, e) for e in range(len(mesh.boundary_edges))])


# ------------------------------------------------------------------ generators

def gen_rectangle(x0, y0, x1, y1, nx, ny, marker=1):
    """Crossed-triangle rectangle mesh.

    Each of the ``nx * ny`` cells is split into 4 triangles around its
    center, so the mesh has ``(nx+1)(ny+1) + nx*ny`` nodes and ``4 nx ny``
    triangles.  All boundary edges get the same ``marker``.
    """
    if x1 <= x0 or y1 <= y0 or nx < 1 or ny < 1:
        raise ValueError("gen_rectangle: empty rectangle or non-positive subdivision")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing='ij')
    grid = np.column_stack([gx.ravel(), gy.ravel()])       # node (i, j) -> i*(ny+1)+j
    cx, cy = np.meshgrid(0.5 * (xs[:-1] + xs[1:]), 0.5 * (ys[:-1] + ys[1:]), indexing='ij')
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    nodes = np.vstack([grid, centers])
    ngrid = (nx + 1) * (ny + 1)

    def gid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            c = ngrid + i * ny + j
            v00, v10 = gid(i, j), gid(i + 1, j)
            v11, v01 = gid(i + 1, j + 1), gid(i, j + 1)
            tris += [(v00, v10, c), (v10, v11, c), (v11, v01, c), (v01, v00, c)]

    edges = []
    for i in range(nx):
        edges.append((gid(i, 0), gid(i + 1, 0), marker))            # bottom, +x
    for j in range(ny):
        edges.append((gid(nx, j), gid(nx, j + 1), marker))          # right, +y
    for i in range(nx, 0, -1):
        edges.append((gid(i, ny), gid(i - 1, ny), marker))          # top, -x
    for j in range(ny, 0, -1):
        edges.append((gid(0, j), gid(0, j - 1), marker))            # left, -y
    return Mesh(nodes, np.array(tris), np.array(edges))


def gen_disk(center, radius, refinement, marker=1):
    """Disk mesh from a refined hexagon with boundary nodes snapped to the circle.

    Starts from 6 triangles around the center and uniformly refines
    ``refinement`` times; every new boundary node is projected onto the
    circle, so the polygonal area approaches ``pi r^2`` at rate ``O(4^-k)``.
    """
    if radius <= 0 or refinement < 0:
        raise ValueError("gen_disk: radius must be positive, refinement non-negative")
    center = np.asarray(center, dtype=float)
    ang = np.arange(6) * (np.pi / 3.0)
    ring = center + radius * np.column_stack([np.cos(ang), np.sin(ang)])
    nodes = [center] + list(ring)
    tris = [(0, 1 + k, 1 + (k + 1) % 6) for k in range(6)]
    bnd = [(1 + k, 1 + (k + 1) % 6, marker) for k in range(6)]

    for _ in range(refinement):
        nodes, tris, bnd = _refine_once(nodes, tris, bnd, center, radius)
    return Mesh(np.array(nodes), np.array(tris), np.array(bnd))


def _refine_once(nodes, tris, bnd, center, radius):
    nodes = list(nodes)
    midpoint = {}
    boundary_keys = {(min(a, b), max(a, b)) for a, b, _ in bnd}

    def mid(a, b):
        key = (min(a, b), max(a, b))
        m = midpoint.get(key)
        if m is None:
            p = 0.5 * (nodes[a] + nodes[b])
            if key in boundary_keys:
                v = p - center
                p = center + radius * v / np.hypot(v[0], v[1])
            midpoint[key] = m = len(nodes)
            nodes.append(p)
        return m

    new_tris = []
    for v0, v1, v2 in tris:
        m01, m12, m20 = mid(v0, v1), mid(v1, v2), mid(v2, v0)
        new_tris += [(v0, m01, m20), (v1, m12, m01), (v2, m20, m12), (m01, m12, m20)]
    new_bnd = []
    for a, b, mk in bnd:
        m = mid(a, b)
        new_bnd += [(a, m, mk), (m, b, mk)]
    return nodes, new_tris, new_bnd


# -------------------------------------------------------------------------- IO

def _fmt(x):
    return repr(float(x))


def save_mesh(mesh, path):
    """Write a mesh in the ``shapegrad-mesh v1`` format (atomic replace)."""
    lines = ["shapegrad-mesh v1", f"nodes {mesh.n_nodes}"]
    lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in mesh.nodes]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines += [f"{a} {b} {m}" for a, b, m in mesh.boundary_edges]
    data = "\n".join(lines) + "\n"
    _atomic_write_text(path, data)


def _atomic_write_text(path, data):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def load_mesh(path):
    """Read a ``shapegrad-mesh v1`` file; round-trips :func:`save_mesh` bit-exactly."""
    with open(path, "r") as fh:
        lines = fh.read().splitlines()

    pos = 0

    def take(what):
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError(f"{path}: line {pos + 1}: unexpected end of file, expected {what}")
        pos += 1
        return lines[pos - 1], pos

    header, ln = take("header")
    if header.strip() != "shapegrad-mesh v1":
        raise MeshFormatError(f"{path}: line {ln}: bad header {header!r}")

    def section(name, ncols, conv):
        line, ln = take(f"'{name} N'")
        parts = line.split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshFormatError(f"{path}: line {ln}: expected '{name} <count>', got {line!r}")
        try:
            count = int(parts[1])
        except ValueError:
            raise MeshFormatError(f"{path}: line {ln}: bad count {parts[1]!r}") from None
        if count < 0:
            raise MeshFormatError(f"{path}: line {ln}: negative count")
        rows = []
        for _ in range(count):
            line, ln = take(f"{name} row")
            parts = line.split()
            if len(parts) != ncols:
                raise MeshFormatError(f"{path}: line {ln}: expected {ncols} columns, got {len(parts)}")
            try:
                rows.append([conv(p) for p in parts])
            except ValueError:
                raise MeshFormatError(f"{path}: line {ln}: bad value in {line!r}") from None
        return np.array(rows, dtype=float if conv is float else np.int64).reshape(count, ncols)

    nodes = section("nodes", 2, float)
    tris = section("triangles", 3, int)
    bnd = section("boundary", 3, int)
    if pos != len(lines) and any(l.strip() for l in lines[pos:]):
        raise MeshFormatError(f"{path}: line {pos + 1}: trailing content")
    return Mesh(nodes, tris, bnd)
