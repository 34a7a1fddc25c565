"""
Lagrange P1/P2 finite elements on triangular meshes.

The geometry map is always the affine P1 map of the triangle vertices
(also for P2 fields), so every integral reduces to a fixed reference
quadrature rule scaled by element areas.  One :class:`FeSpace` instance
fixes the quadrature degrees used by *all* assemblies on it; keeping the
state, adjoint, material and shape-derivative assemblies on the same rule
is what makes the discrete identities in the rest of the package exact.

Assembly is vectorized over elements (local matrices by einsum, scattered
through COO duplicate summation), which is deterministic run to run.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(Exception):
    """Linear solver failure: singular factorization or residual too large."""


class NewtonError(SolverError):
    """Nonlinear iteration failure; carries the residual-norm history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


# ------------------------------------------------------------------ quadrature

class QuadratureRule:
    """Reference-element rule: barycentric points and weights summing to 1.

    Volume rules integrate ``|K| * sum_q w_q f(x_q)`` exactly for
    polynomials up to ``degree``; edge rules use points parametrized by
    ``t`` in [0, 1] along the edge.
    """

    def __init__(self, points, weights, degree, kind):
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.degree = degree
        self.kind = kind


def _orbit3(a):
    return [(1 - 2 * a, a, a), (a, 1 - 2 * a, a), (a, a, 1 - 2 * a)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (b, a, c), (a, c, b), (c, a, b), (b, c, a), (c, b, a)]


def volume_rule(degree):
    """Symmetric triangle rules of degree 2, 4 (default) or 6."""
    if degree <= 2:
        pts = _orbit3(0.5)
        wts = [1.0 / 3.0] * 3
        return QuadratureRule(pts, wts, 2, "volume")
    if degree <= 4:
        a1, w1 = 0.44594849091596489, 0.22338158967801147
        a2, w2 = 0.091576213509770743, 0.10995174365532187
        pts = _orbit3(a1) + _orbit3(a2)
        wts = [w1] * 3 + [w2] * 3
        return QuadratureRule(pts, wts, 4, "volume")
    if degree <= 6:
        a1, w1 = 0.063089014491502228, 0.050844906370206817
        a2, w2 = 0.24928674517091042, 0.11678627572637937
        a3, b3, w3 = 0.31035245103378441, 0.053145049844816947, 0.082851075618373575
        pts = _orbit3(a1) + _orbit3(a2) + _orbit6(a3, b3)
        wts = [w1] * 3 + [w2] * 3 + [w3] * 6
        return QuadratureRule(pts, wts, 6, "volume")
    raise ValueError(f"no volume rule of degree {degree}")


def edge_rule(degree=5):
    """Gauss rule on [0, 1]; the 3-point rule (degree 5) is the default."""
    if degree <= 3:
        d = np.sqrt(3.0) / 6.0
        return QuadratureRule([0.5 - d, 0.5 + d], [0.5, 0.5], 3, "edge")
    if degree <= 5:
        d = np.sqrt(15.0) / 10.0
        return QuadratureRule([0.5 - d, 0.5, 0.5 + d],
                              [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0], 5, "edge")
    raise ValueError(f"no edge rule of degree {degree}")


# ----------------------------------------------------------------- shape funcs

_REF_GRAD_L = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # grad of (l1,l2,l3)


def _basis_p1(lmb):
    return np.asarray(lmb, dtype=float)


def _grad_p1(lmb):
    nq = len(lmb)
    return np.broadcast_to(_REF_GRAD_L, (nq, 3, 2)).copy()


def _basis_p2(lmb):
    lmb = np.asarray(lmb, dtype=float)
    v = lmb * (2.0 * lmb - 1.0)
    e = 4.0 * np.stack([lmb[:, 0] * lmb[:, 1],
                        lmb[:, 1] * lmb[:, 2],
                        lmb[:, 2] * lmb[:, 0]], axis=1)
    return np.concatenate([v, e], axis=1)


def _grad_p2(lmb):
    lmb = np.asarray(lmb, dtype=float)
    nq = len(lmb)
    g = np.empty((nq, 6, 2))
    for i in range(3):
        g[:, i] = (4.0 * lmb[:, i, None] - 1.0) * _REF_GRAD_L[i]
    pairs = [(0, 1), (1, 2), (2, 0)]
    for k, (i, j) in enumerate(pairs):
        g[:, 3 + k] = 4.0 * (lmb[:, i, None] * _REF_GRAD_L[j] + lmb[:, j, None] * _REF_GRAD_L[i])
    return g


# ----------------------------------------------------------------------- space

class FeSpace:
    """Scalar Lagrange space of order 1 or 2 with frozen quadrature rules.

    Parameters
    ----------
    mesh : shapegrad.mesh.Mesh
    order : int
        1 (vertex dofs) or 2 (vertex + edge-midpoint dofs).
    quad_degree : int
        Volume quadrature degree shared by every assembly on this space.
    edge_degree : int
        Boundary quadrature degree.
    """

    def __init__(self, mesh, order=1, quad_degree=4, edge_degree=5):
        if order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {order}")
        self.mesh = mesh
        self.order = order
        self.vol_rule = volume_rule(quad_degree)
        self.edg_rule = edge_rule(edge_degree)
        self._build_dofs()
        self._build_geometry()
        self._build_boundary()

    # -------------------------------------------------------------- structure

    def _build_dofs(self):
        mesh = self.mesh
        if self.order == 1:
            self.dof_count = mesh.n_nodes
            self.element_dofs = mesh.triangles.copy()
            self.dof_coords = mesh.nodes.copy()
            self._edge_index = None
            return
        edge_index = {}
        tri_edges = np.empty((mesh.n_triangles, 3), dtype=np.int64)
        for t, tri in enumerate(mesh.triangles):
            for k, (a, b) in enumerate(((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0]))):
                key = (min(a, b), max(a, b))
                idx = edge_index.get(key)
                if idx is None:
                    edge_index[key] = idx = len(edge_index)
                tri_edges[t, k] = idx
        self._edge_index = edge_index
        n = mesh.n_nodes
        self.dof_count = n + len(edge_index)
        self.element_dofs = np.concatenate([mesh.triangles, n + tri_edges], axis=1)
        mids = np.empty((len(edge_index), 2))
        for (a, b), idx in edge_index.items():
            mids[idx] = 0.5 * (mesh.nodes[a] + mesh.nodes[b])
        self.dof_coords = np.vstack([mesh.nodes, mids])

    def _build_geometry(self):
        mesh = self.mesh
        tri = mesh.nodes[mesh.triangles]                       # (M, 3, 2)
        J = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]], axis=2)
        self.detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        invJ = np.empty_like(J)
        invJ[:, 0, 0] = J[:, 1, 1]
        invJ[:, 0, 1] = -J[:, 0, 1]
        invJ[:, 1, 0] = -J[:, 1, 0]
        invJ[:, 1, 1] = J[:, 0, 0]
        invJ /= self.detJ[:, None, None]
        self.invJT = np.swapaxes(invJ, 1, 2)

        lmb = self.vol_rule.points
        self.qpoints = np.einsum('qk,mkd->mqd', lmb, tri)
        self.qweights = 0.5 * self.detJ[:, None] * self.vol_rule.weights[None, :]
        if self.order == 1:
            self.basis = _basis_p1(lmb)
            gref = _grad_p1(lmb)
        else:
            self.basis = _basis_p2(lmb)
            gref = _grad_p2(lmb)
        # physical gradients: invJ^T applied to reference gradients
        self.grads = np.einsum('mdr,qar->mqad', self.invJT, gref)

    def _build_boundary(self):
        mesh = self.mesh
        be = mesh.boundary_edges
        B = len(be)
        t = self.edg_rule.points
        self.edge_markers = be[:, 2].copy()
        self.edge_owner = np.array([mesh.boundary_edge_owner(e) for e in range(B)], dtype=np.int64)
        a = mesh.nodes[be[:, 0]]
        b = mesh.nodes[be[:, 1]]
        tv = b - a
        self.edge_len = np.hypot(tv[:, 0], tv[:, 1])
        n = np.column_stack([tv[:, 1], -tv[:, 0]]) / self.edge_len[:, None]
        # orient away from the owning triangle's centroid
        cent = mesh.nodes[mesh.triangles[self.edge_owner]].mean(axis=1)
        flip = np.einsum('bd,bd->b', n, 0.5 * (a + b) - cent) < 0.0
        n[flip] *= -1.0
        self.edge_normal = n
        self.edge_qpoints = a[:, None, :] + t[None, :, None] * tv[:, None, :]
        self.edge_qweights = self.edge_len[:, None] * self.edg_rule.weights[None, :]
        if self.order == 1:
            self.edge_basis = np.column_stack([1.0 - t, t])
            self.edge_dofs = be[:, :2].copy()
        else:
            self.edge_basis = np.column_stack([(1.0 - t) * (1.0 - 2.0 * t),
                                               t * (2.0 * t - 1.0),
                                               4.0 * t * (1.0 - t)])
            mid = np.array([self.mesh.n_nodes + self._edge_index[(min(x, y), max(x, y))]
                            for x, y, _ in be], dtype=np.int64)
            self.edge_dofs = np.column_stack([be[:, :2], mid])

    # -------------------------------------------------------------- utilities

    @property
    def markers(self):
        return sorted(set(int(m) for m in self.edge_markers))

    def edges_of_marker(self, marker):
        """Boundary-edge indices carrying ``marker``; None selects every edge."""
        if marker is None:
            return np.arange(len(self.edge_markers))
        idx = np.nonzero(self.edge_markers == marker)[0]
        if len(idx) == 0:
            raise ValueError(f"unknown boundary marker {marker}; known: {self.markers}")
        return idx

    def boundary_dofs(self, marker=None):
        """Sorted dof indices lying on the marked part of the boundary."""
        idx = np.arange(len(self.edge_markers)) if marker is None else self.edges_of_marker(marker)
        return np.unique(self.edge_dofs[idx].ravel())

    def interpolate(self, f):
        """Nodal interpolant of ``f`` (callable on (n, 2) arrays)."""
        vals = np.asarray(f(self.dof_coords), dtype=float)
        if vals.shape != (self.dof_count,):
            raise ValueError("interpolate: function must return one value per point")
        return ScalarField(self, vals)


class ScalarField:
    """Coefficients of a scalar FE function on a :class:`FeSpace`."""

    def __init__(self, space, coefficients):
        self.space = space
        self.coefficients = np.asarray(coefficients, dtype=float)
        if self.coefficients.shape != (space.dof_count,):
            raise ValueError(f"expected {space.dof_count} coefficients, got {self.coefficients.shape}")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("non-finite field coefficients")


def _bary_checked(bary):
    bary = np.asarray(bary, dtype=float)
    if bary.shape != (3,) or abs(bary.sum() - 1.0) > 1e-10:
        raise ValueError("barycentric coordinates must be three values summing to 1")
    if (bary < -1e-12).any():
        raise ValueError("point outside element: negative barycentric coordinate")
    return bary


def eval_field(field, element, bary):
    """Value of a field at barycentric coordinates inside one element."""
    bary = _bary_checked(bary)
    space = field.space
    b = (_basis_p1 if space.order == 1 else _basis_p2)(bary[None, :])[0]
    return float(b @ field.coefficients[space.element_dofs[element]])


def eval_gradient(field, element, bary):
    """Gradient of a field at barycentric coordinates inside one element."""
    bary = _bary_checked(bary)
    space = field.space
    g = (_grad_p1 if space.order == 1 else _grad_p2)(bary[None, :])[0]
    gphys = np.einsum('dr,ar->ad', space.invJT[element], g)
    return field.coefficients[space.element_dofs[element]] @ gphys


def field_qvalues(field):
    """Field values at all volume quadrature points, shape (M, nq)."""
    return np.einsum('qa,ma->mq', field.space.basis, field.coefficients[field.space.element_dofs])


def field_qgrads(field):
    """Field gradients at all volume quadrature points, shape (M, nq, 2)."""
    return np.einsum('mqad,ma->mqd', field.space.grads, field.coefficients[field.space.element_dofs])


def edge_qvalues(field, edges):
    """Trace values at boundary-edge quadrature points, shape (len(edges), nqe)."""
    coeff = field.coefficients[field.space.edge_dofs[edges]]
    return np.einsum('qa,ba->bq', field.space.edge_basis, coeff)


def edge_qgrads(field, edges):
    """One-sided gradient traces from the owning element, shape (len(edges), nqe, 2).

    The trace is evaluated with the owner's basis at the barycentric image
    of each edge quadrature point.
    """
    space = field.space
    mesh = space.mesh
    out = np.empty((len(edges), space.edg_rule.points.shape[0], 2))
    for row, e in enumerate(edges):
        owner = space.edge_owner[e]
        tri = mesh.triangles[owner]
        v = mesh.nodes[tri]
        T = np.stack([v[1] - v[0], v[2] - v[0]], axis=1)
        pts = space.edge_qpoints[e]
        loc = np.linalg.solve(T, (pts - v[0]).T).T
        lmb = np.column_stack([1.0 - loc.sum(axis=1), loc])
        g = (_grad_p1 if space.order == 1 else _grad_p2)(lmb)
        gphys = np.einsum('dr,qar->qad', space.invJT[owner], g)
        out[row] = np.einsum('qad,a->qd', gphys, field.coefficients[space.element_dofs[owner]])
    return out


def l2_norm(space, values):
    """L2 norm of a coefficient vector over the space's mesh."""
    f = ScalarField(space, values)
    v = field_qvalues(f)
    return float(np.sqrt(np.sum(space.qweights * v * v)))


# ------------------------------------------------------------------- assembly

def _scatter_matrix(space, local):
    nloc = space.element_dofs.shape[1]
    rows = np.repeat(space.element_dofs, nloc, axis=1).ravel()
    cols = np.tile(space.element_dofs, (1, nloc)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)),
                      shape=(space.dof_count, space.dof_count))
    return A.tocsr()


def _scatter_vector(space, local):
    out = np.zeros(space.dof_count)
    np.add.at(out, space.element_dofs, local)
    return out


def _mat_at(coeff, P):
    """Evaluate a matrix coefficient at points: constant (2,2) or callable."""
    arr = np.asarray(coeff, dtype=float) if not callable(coeff) else None
    if arr is not None and arr.shape == (2, 2):
        return np.broadcast_to(arr, P.shape[:-1] + (2, 2))
    vals = np.asarray(coeff(P), dtype=float)
    if vals.shape == (2, 2):
        return np.broadcast_to(vals, P.shape[:-1] + (2, 2))
    if vals.shape != P.shape[:-1] + (2, 2):
        raise ValueError(f"matrix coefficient returned shape {vals.shape}")
    return vals


def _scalar_at(f, P):
    if f is None:
        return np.ones(P.shape[:-1])
    if np.isscalar(f):
        return np.full(P.shape[:-1], float(f))
    vals = np.asarray(f(P), dtype=float)
    if vals.shape != P.shape[:-1]:
        raise ValueError(f"scalar coefficient returned shape {vals.shape}")
    return vals


def assemble_diffusion(space, coeff):
    """Stiffness matrix with matrix coefficient: A_ij = int (coeff grad phi_j) . grad phi_i."""
    C = _mat_at(coeff, space.qpoints)
    local = np.einsum('mq,mqia,mqab,mqjb->mij', space.qweights, space.grads, C, space.grads)
    return _scatter_matrix(space, local)


def assemble_diffusion_values(space, C):
    """Stiffness matrix from coefficient values already at quadrature points."""
    local = np.einsum('mq,mqia,mqab,mqjb->mij', space.qweights, space.grads, C, space.grads)
    return _scatter_matrix(space, local)


def assemble_mass(space, weight=None):
    """Mass matrix int w phi_i phi_j (w defaults to 1)."""
    w = _scalar_at(weight, space.qpoints)
    local = np.einsum('mq,qi,qj->mij', space.qweights * w, space.basis, space.basis)
    return _scatter_matrix(space, local)


def assemble_mass_values(space, vals):
    local = np.einsum('mq,qi,qj->mij', space.qweights * vals, space.basis, space.basis)
    return _scatter_matrix(space, local)


def assemble_gradscalar_values(space, W, vals):
    """Matrix with entries int vals * (W . grad phi_i) phi_j   (non-symmetric).

    ``W`` has shape (M, nq, 2) and ``vals`` (M, nq); used for Newton
    linearizations where the trial function enters algebraically.
    """
    local = np.einsum('mq,mqia,mqa,qj->mij', space.qweights, space.grads, W * vals[..., None],
                      space.basis)
    return _scatter_matrix(space, local)


def assemble_load(space, f):
    """Load vector int f phi_i."""
    vals = _scalar_at(f, space.qpoints)
    return _scatter_vector(space, np.einsum('mq,qi->mi', space.qweights * vals, space.basis))


def assemble_load_values(space, vals):
    """Load vector from integrand values at quadrature points, shape (M, nq)."""
    return _scatter_vector(space, np.einsum('mq,qi->mi', space.qweights * vals, space.basis))


def assemble_grad_load_values(space, W):
    """Vector with entries int W . grad phi_i from values W of shape (M, nq, 2)."""
    local = np.einsum('mq,mqa,mqia->mi', space.qweights, W, space.grads)
    return _scatter_vector(space, local)


def assemble_boundary_mass(space, marker, weight=None):
    """Boundary mass matrix int_G w phi_i phi_j over edges with ``marker``."""
    edges = space.edges_of_marker(marker)
    w = _scalar_at(weight, space.edge_qpoints[edges])
    local = np.einsum('bq,qi,qj->bij', space.edge_qweights[edges] * w,
                      space.edge_basis, space.edge_basis)
    dofs = space.edge_dofs[edges]
    nle = dofs.shape[1]
    rows = np.repeat(dofs, nle, axis=1).ravel()
    cols = np.tile(dofs, (1, nle)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)),
                         shape=(space.dof_count, space.dof_count)).tocsr()


def assemble_boundary_load(space, marker, g):
    """Boundary load vector int_G g phi_i over edges with ``marker``."""
    edges = space.edges_of_marker(marker)
    vals = _scalar_at(g, space.edge_qpoints[edges])
    return assemble_boundary_load_values(space, edges, vals)


def assemble_boundary_load_values(space, edges, vals):
    """Boundary load from integrand values (len(edges), nqe) on given edges."""
    local = np.einsum('bq,qi->bi', space.edge_qweights[edges] * vals, space.edge_basis)
    out = np.zeros(space.dof_count)
    np.add.at(out, space.edge_dofs[edges], local)
    return out


# ------------------------------------------------------------ constraints

class LinearSystem:
    """Sparse system with (already applied) Dirichlet constraints recorded."""

    def __init__(self, matrix, rhs, constrained=None, values=None, symmetric=False):
        self.matrix = matrix.tocsr()
        self.rhs = np.asarray(rhs, dtype=float)
        self.constrained = np.asarray([] if constrained is None else constrained, dtype=np.int64)
        self.values = np.asarray([] if values is None else values, dtype=float)
        self.symmetric = bool(symmetric)


def apply_dirichlet(A, b, dofs, values):
    """Symmetric elimination of Dirichlet dofs.

    Zeroes the constrained rows and columns, puts 1 on the diagonal, and
    moves the column contribution to the right-hand side, so a symmetric
    ``A`` stays symmetric.  Applying it twice is a no-op.

    Returns
    -------
    (A2, b2) : modified copies.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    n = A.shape[0]
    z = np.zeros(n)
    z[dofs] = values
    b2 = b - A @ z
    b2[dofs] = values
    keep = np.ones(n)
    keep[dofs] = 0.0
    Dk = sp.diags(keep)
    Dc = sp.diags(1.0 - keep)
    A2 = (Dk @ A @ Dk + Dc).tocsr()
    return A2, b2


def solve(A, b, symmetric=False):
    """Direct sparse solve with a residual check.

    Uses SuperLU (MMD ordering on the symmetric path, COLAMD otherwise)
    and verifies ``|Ax - b| <= 1e-10 (|b| + 1)``.
    """
    A = A.tocsc()
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A" if symmetric else "COLAMD")
    except RuntimeError as exc:
        raise SolverError(f"singular system: {exc}") from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SolverError("singular system: factorization produced non-finite solution")
    res = np.linalg.norm(A @ x - b)
    if res > 1e-10 * (np.linalg.norm(b) + 1.0):
        raise SolverError(f"solver residual {res:.3e} exceeds tolerance")
    return x


class Factorized:
    """Reusable LU factorization with the same residual check as :func:`solve`."""

    def __init__(self, A, symmetric=False):
        self.A = A.tocsc()
        try:
            self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A" if symmetric else "COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"singular system: {exc}") from exc

    def solve(self, b):
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SolverError("singular system: factorization produced non-finite solution")
        res = np.linalg.norm(self.A @ x - b)
        if res > 1e-10 * (np.linalg.norm(b) + 1.0):
            raise SolverError(f"solver residual {res:.3e} exceeds tolerance")
        return x
