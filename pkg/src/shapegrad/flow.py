"""
Flow maps of autonomous velocity fields and their first-order expansions.

A velocity field theta comes with hand-coded Jacobian and second
derivatives; positions and flow Jacobians are integrated with classical
RK4 (the Jacobian obeys d/ds DT_s = Dtheta(T_s) DT_s).  The helpers
expose the pullback quantities needed by shape-derivative assembly:

    xi(s)      = det DT_s
    M(s, Q)    = xi(s) DT_s^-1 Q DT_s^-T
    M'(0, Q)   = div(theta) Q - Dtheta Q - Q Dtheta^T
    xi_G(s)    = |det DT_s| |DT_s^-T n|
    div_G      = div(theta) - (Dtheta n) . n

Catalog fields are optionally multiplied by a C^2 cutoff that vanishes
with two derivatives on the faces of a support box, so all fields can be
made compactly supported without losing analytic derivatives.
"""

import numpy as np

from .mesh import _signed_areas


class FlowDegeneracyError(Exception):
    """Raised when a flow map folds over (non-positive Jacobian determinant)."""


class VectorFieldSpec:
    """Velocity field with analytic derivatives.

    Parameters
    ----------
    name : str
    eval, jac, hess : callables
        Vectorized over leading axes: ``eval(P)`` maps ``(..., 2)`` to
        ``(..., 2)``; ``jac`` returns ``(..., 2, 2)`` with
        ``jac[i, j] = d theta_i / d x_j``; ``hess`` returns
        ``(..., 2, 2, 2)`` with ``hess[i, j, k] = d2 theta_i / dx_j dx_k``.
    support_box : (2, 2) float array or None
        ``[[xlo, ylo], [xhi, yhi]]``; ``None`` means unbounded support.
    """

    def __init__(self, name, eval, jac, hess, support_box=None):
        self.name = name
        self.eval = eval
        self.jac = jac
        self.hess = hess
        self.support_box = None if support_box is None else np.asarray(support_box, dtype=float)

    def __repr__(self):
        return f"VectorFieldSpec({self.name!r})"


class FlowState:
    """Position and flow Jacobian of one trajectory at pseudo-time ``s``."""

    def __init__(self, position, jacobian, s):
        self.position = np.asarray(position, dtype=float)
        self.jacobian = np.asarray(jacobian, dtype=float)
        self.s = float(s)
        if _det2(self.jacobian) <= 0.0:
            raise FlowDegeneracyError(
                f"flow Jacobian determinant {_det2(self.jacobian):.3e} <= 0 at s={s}")


def _det2(J):
    return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]


def _inv2(J):
    det = _det2(J)
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1]
    inv[..., 0, 1] = -J[..., 0, 1]
    inv[..., 1, 0] = -J[..., 1, 0]
    inv[..., 1, 1] = J[..., 0, 0]
    return inv / det[..., None, None]


def advect_batch(theta, s, x0, steps=32, want_jac=True):
    """RK4-transport many points (and flow Jacobians) at once.

    Parameters
    ----------
    theta : VectorFieldSpec
    s : float
        Final pseudo-time; may be negative.
    x0 : (n, 2) array
    steps : int
        Number of uniform RK4 steps.

    Returns
    -------
    (X, J) : positions (n, 2) and Jacobians (n, 2, 2); ``J`` is None when
    ``want_jac`` is false.
    """
    if steps < 1:
        raise ValueError("advect: steps must be >= 1")
    X = np.array(x0, dtype=float)
    J = np.broadcast_to(np.eye(2), X.shape + (2,)).copy() if want_jac else None
    if s == 0.0:
        return X, J
    h = s / steps

    def rhs(Xc, Jc):
        v = theta.eval(Xc)
        if Jc is None:
            return v, None
        return v, np.einsum('...ij,...jk->...ik', theta.jac(Xc), Jc)

    for _ in range(steps):
        k1x, k1j = rhs(X, J)
        k2x, k2j = rhs(X + 0.5 * h * k1x, None if J is None else J + 0.5 * h * k1j)
        k3x, k3j = rhs(X + 0.5 * h * k2x, None if J is None else J + 0.5 * h * k2j)
        k4x, k4j = rhs(X + h * k3x, None if J is None else J + h * k3j)
        X = X + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        if J is not None:
            J = J + (h / 6.0) * (k1j + 2 * k2j + 2 * k3j + k4j)
            dets = _det2(J)
            if (dets <= 0.0).any():
                i = int(np.nonzero(dets <= 0.0)[0][0])
                raise FlowDegeneracyError(
                    f"flow Jacobian determinant {dets[i]:.3e} <= 0 during advection")
    return X, J


def advect(theta, s, x0, steps=32):
    """Transport a single point; returns a :class:`FlowState`.

    ``s = 0`` returns the initial point with identity Jacobian exactly.
    """
    X, J = advect_batch(theta, s, np.asarray(x0, dtype=float)[None, :], steps=steps)
    return FlowState(X[0], J[0], s)


def xi(state):
    """Volume factor det DT_s of a flow state."""
    det = float(_det2(state.jacobian))
    if det <= 0.0:
        raise FlowDegeneracyError(f"xi: determinant {det:.3e} <= 0")
    return det


def m_of_s(state, Q):
    """Pullback of a constant diffusion matrix: xi DT^-1 Q DT^-T."""
    Q = np.asarray(Q, dtype=float)
    inv = _inv2(state.jacobian)
    return xi(state) * inv @ Q @ inv.T


def m_prime0(theta, x, Q):
    """s-derivative of :func:`m_of_s` at s = 0: div(theta) Q - Dtheta Q - Q Dtheta^T."""
    Q = np.asarray(Q, dtype=float)
    x = np.asarray(x, dtype=float)
    Jt = theta.jac(x[None, :])[0]
    return np.trace(Jt) * Q - Jt @ Q - Q @ Jt.T


def _check_unit(n):
    n = np.asarray(n, dtype=float)
    if abs(np.hypot(n[0], n[1]) - 1.0) > 1e-12:
        raise ValueError(f"normal must be a unit vector, got |n| = {np.hypot(n[0], n[1])!r}")
    return n


def xi_gamma(state, n):
    """Surface factor |det DT_s| |DT_s^-T n| for a unit normal ``n``."""
    n = _check_unit(n)
    inv = _inv2(state.jacobian)
    return abs(float(_det2(state.jacobian))) * float(np.hypot(*(inv.T @ n)))


def div_gamma(theta, x, n):
    """Tangential divergence div(theta) - (Dtheta n) . n at ``x`` (unit ``n``)."""
    n = _check_unit(n)
    x = np.asarray(x, dtype=float)
    Jt = theta.jac(x[None, :])[0]
    return float(np.trace(Jt) - n @ Jt @ n)


def transport_mesh(theta, s, mesh, steps=32):
    """Advect every node of ``mesh``; connectivity and hold-all are kept.

    Raises
    ------
    FlowDegeneracyError
        If any transported triangle has non-positive signed area (the
        message reports the first offending triangle index).
    """
    X, _ = advect_batch(theta, s, mesh.nodes, steps=steps, want_jac=False)
    areas = _signed_areas(X, mesh.triangles)
    bad = np.nonzero(areas <= 0.0)[0]
    if len(bad):
        raise FlowDegeneracyError(
            f"transport inverts triangle {bad[0]} (signed area {areas[bad[0]]:.3e}) at s={s}")
    return mesh.with_nodes(X)


# ------------------------------------------------------------------- catalog

def _smoothstep(t):
    # C^2 quintic ramp: value/slope/curvature vanish at t=0, value 1 with
    # zero slope/curvature at t=1.
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)


def _smoothstep_d1(t):
    tc = np.clip(t, 0.0, 1.0)
    inside = (t > 0.0) & (t < 1.0)
    return np.where(inside, 30.0 * tc ** 2 * (1.0 - tc) ** 2, 0.0)


def _smoothstep_d2(t):
    tc = np.clip(t, 0.0, 1.0)
    inside = (t > 0.0) & (t < 1.0)
    return np.where(inside, 60.0 * tc * (1.0 - tc) * (1.0 - 2.0 * tc), 0.0)


def _axis_cutoff(x, lo, hi, w):
    """Per-axis C^2 plateau factor and its two derivatives."""
    tl = (x - lo) / w
    tr = (hi - x) / w
    gl, gr = _smoothstep(tl), _smoothstep(tr)
    dl, dr = _smoothstep_d1(tl) / w, -_smoothstep_d1(tr) / w
    sl, sr = _smoothstep_d2(tl) / w ** 2, _smoothstep_d2(tr) / w ** 2
    g = gl * gr
    dg = dl * gr + gl * dr
    d2g = sl * gr + 2.0 * dl * dr + gl * sr
    return g, dg, d2g


def _cutoff(box, ramp):
    lo, hi = np.asarray(box, dtype=float)
    w = ramp * (hi - lo)

    def rho(P):
        gx, dgx, d2gx = _axis_cutoff(P[..., 0], lo[0], hi[0], w[0])
        gy, dgy, d2gy = _axis_cutoff(P[..., 1], lo[1], hi[1], w[1])
        val = gx * gy
        grad = np.stack([dgx * gy, gx * dgy], axis=-1)
        hess = np.empty(P.shape[:-1] + (2, 2))
        hess[..., 0, 0] = d2gx * gy
        hess[..., 0, 1] = hess[..., 1, 0] = dgx * dgy
        hess[..., 1, 1] = gx * d2gy
        return val, grad, hess

    return rho


def _apply_cutoff(val, jac, hess, box, ramp):
    rho = _cutoff(box, ramp)

    def v(P):
        r, _, _ = rho(P)
        return val(P) * r[..., None]

    def j(P):
        r, dr, _ = rho(P)
        return (jac(P) * r[..., None, None]
                + np.einsum('...i,...j->...ij', val(P), dr))

    def h(P):
        r, dr, d2r = rho(P)
        base_v, base_j, base_h = val(P), jac(P), hess(P)
        out = base_h * r[..., None, None, None]
        out += np.einsum('...ij,...k->...ijk', base_j, dr)
        out += np.einsum('...ik,...j->...ijk', base_j, dr)
        out += np.einsum('...i,...jk->...ijk', base_v, d2r)
        return out

    return v, j, h


def _zeros_like_field(P, rank):
    return np.zeros(P.shape[:-1] + (2,) * rank)


def _const_field(c):
    c = np.asarray(c, dtype=float)

    def val(P):
        return np.broadcast_to(c, P.shape[:-1] + (2,)).copy()

    return val, lambda P: _zeros_like_field(P, 2), lambda P: _zeros_like_field(P, 3)


def _linear_field(A, b):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)

    def val(P):
        return np.einsum('ij,...j->...i', A, P) + b

    def jac(P):
        return np.broadcast_to(A, P.shape[:-1] + (2, 2)).copy()

    return val, jac, lambda P: _zeros_like_field(P, 3)


def _poly2_field(C):
    # C has shape (2, 6): coefficients of 1, x, y, x^2, x*y, y^2 per component
    C = np.asarray(C, dtype=float).reshape(2, 6)

    def val(P):
        x, y = P[..., 0], P[..., 1]
        basis = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=-1)
        return np.einsum('ik,...k->...i', C, basis)

    def jac(P):
        x, y = P[..., 0], P[..., 1]
        dx = np.stack([np.zeros_like(x), np.ones_like(x), np.zeros_like(x),
                       2 * x, y, np.zeros_like(x)], axis=-1)
        dy = np.stack([np.zeros_like(x), np.zeros_like(x), np.ones_like(x),
                       np.zeros_like(x), x, 2 * y], axis=-1)
        out = np.empty(P.shape[:-1] + (2, 2))
        out[..., 0] = np.einsum('ik,...k->...i', C, dx)
        out[..., 1] = np.einsum('ik,...k->...i', C, dy)
        return out

    def hess(P):
        out = np.zeros(P.shape[:-1] + (2, 2, 2))
        out[..., 0, 0] = 2 * C[:, 3]
        out[..., 0, 1] = out[..., 1, 0] = C[:, 4]
        out[..., 1, 1] = 2 * C[:, 5]
        return out

    return val, jac, hess


def _bump_field(a, c, r):
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)

    def parts(P):
        d = (P - c) / r
        u = np.einsum('...i,...i->...', d, d)
        inside = u < 1.0
        om = np.where(inside, 1.0 - u, 0.0)
        w = om ** 3
        wp = np.where(inside, -3.0 * om ** 2, 0.0)
        wpp = np.where(inside, 6.0 * om, 0.0)
        du = 2.0 * (P - c) / r ** 2
        return w, wp, wpp, du

    def val(P):
        w, _, _, _ = parts(P)
        return np.einsum('...,i->...i', w, a)

    def jac(P):
        _, wp, _, du = parts(P)
        return np.einsum('i,...j->...ij', a, wp[..., None] * du)

    def hess(P):
        _, wp, wpp, du = parts(P)
        quad = np.einsum('...,...j,...k->...jk', wpp, du, du)
        lin = (2.0 / r ** 2) * wp[..., None, None] * np.eye(2)
        return np.einsum('i,...jk->...ijk', a, quad + lin)

    return val, jac, hess


def _tensor_bump_field(a, c, w):
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    w = np.asarray(w, dtype=float)

    def axis(t, wk):
        inside = np.abs(t) < 1.0
        om = np.where(inside, 1.0 - t * t, 0.0)
        B = om ** 3
        Bp = np.where(inside, -6.0 * t * om ** 2, 0.0) / wk
        Bpp = np.where(inside, -6.0 * om ** 2 + 24.0 * t * t * om, 0.0) / wk ** 2
        return B, Bp, Bpp

    def parts(P):
        return (axis((P[..., 0] - c[0]) / w[0], w[0]),
                axis((P[..., 1] - c[1]) / w[1], w[1]))

    def val(P):
        (bx, _, _), (by, _, _) = parts(P)
        return np.einsum('...,i->...i', bx * by, a)

    def jac(P):
        (bx, dbx, _), (by, dby, _) = parts(P)
        g = np.stack([dbx * by, bx * dby], axis=-1)
        return np.einsum('i,...j->...ij', a, g)

    def hess(P):
        (bx, dbx, d2bx), (by, dby, d2by) = parts(P)
        H = np.empty(P.shape[:-1] + (2, 2))
        H[..., 0, 0] = d2bx * by
        H[..., 0, 1] = H[..., 1, 0] = dbx * dby
        H[..., 1, 1] = bx * d2by
        return np.einsum('i,...jk->...ijk', a, H)

    return val, jac, hess


#: catalog name -> (builder, number of parameters)
FIELD_CATALOG = {
    "zero": (lambda p: _const_field((0.0, 0.0)), 0),
    "constant": (lambda p: _const_field(p), 2),
    "linear": (lambda p: _linear_field([[p[0], p[1]], [p[2], p[3]]], [p[4], p[5]]), 6),
    "rotation": (lambda p: _linear_field([[0.0, -p[0]], [p[0], 0.0]],
                                         [p[0] * p[2], -p[0] * p[1]]), 3),
    "poly2": (lambda p: _poly2_field(p), 12),
    "bump": (lambda p: _bump_field(p[:2], p[2:4], p[4]), 5),
    "tensor_bump": (lambda p: _tensor_bump_field(p[:2], p[2:4], p[4:6]), 6),
}


def make_field(name, params=(), support_box=None, ramp=0.15):
    """Build a catalog field, optionally confined to ``support_box``.

    The cutoff multiplies the base field by a C^2 plateau function whose
    ramps occupy a ``ramp`` fraction of each box extent, so the result
    vanishes with two derivatives on the box faces.

    Parameters
    ----------
    name : str
        One of ``zero, constant, linear, rotation, poly2, bump, tensor_bump``.
    params : sequence of float
        Catalog-specific parameters (see ``FIELD_CATALOG``); for
        ``rotation`` they are ``(omega, cx, cy)``.
    """
    try:
        builder, nparams = FIELD_CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown field {name!r}; known: {sorted(FIELD_CATALOG)}") from None
    params = tuple(float(v) for v in params)
    if len(params) != nparams:
        raise ValueError(f"field {name!r} takes {nparams} parameters, got {len(params)}")
    val, jac, hess = builder(np.asarray(params))
    if support_box is not None:
        val, jac, hess = _apply_cutoff(val, jac, hess, support_box, ramp)
    return VectorFieldSpec(name, val, jac, hess, support_box=support_box)
