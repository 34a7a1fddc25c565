import numpy as np
import pytest
import scipy.sparse as sp

from shapegrad import fem_core as fem
from shapegrad.mesh import Mesh, gen_disk, gen_rectangle

# frozen by hand: P1 stiffness of the reference triangle (0,0),(1,0),(0,1)
# with unit coefficient: K_ij = area * grad phi_i . grad phi_j
REF_STIFFNESS = np.array([[1.0, -0.5, -0.5],
                          [-0.5, 0.5, 0.0],
                          [-0.5, 0.0, 0.5]])


def _ref_triangle():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2]])
    bnd = np.array([[0, 1, 1], [1, 2, 1], [2, 0, 1]])
    return Mesh(nodes, tris, bnd)


def _tri_monomial_exact(i, j):
    import math
    return math.factorial(i) * math.factorial(j) / math.factorial(i + j + 2)


# ------------------------------------------------------------------ quadrature

@pytest.mark.parametrize("degree", [2, 4, 6])
def test_volume_rule_exactness(degree):
    rule = fem.volume_rule(degree)
    assert abs(rule.weights.sum() - 1.0) <= 1e-14
    x = rule.points[:, 1]
    y = rule.points[:, 2]
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            quad = 0.5 * np.sum(rule.weights * x ** i * y ** j)
            assert abs(quad - _tri_monomial_exact(i, j)) <= 1e-14


def test_volume_rule_degree4_not_exact_at_degree5():
    rule = fem.volume_rule(4)
    x = rule.points[:, 1]
    quad = 0.5 * np.sum(rule.weights * x ** 5)
    assert abs(quad - _tri_monomial_exact(5, 0)) > 1e-6


def test_edge_rule_exactness():
    rule = fem.edge_rule(5)
    assert abs(rule.weights.sum() - 1.0) <= 1e-14
    for k in range(6):
        assert abs(np.sum(rule.weights * rule.points ** k) - 1.0 / (k + 1)) <= 1e-14


# -------------------------------------------------------------------- assembly

def test_reference_triangle_stiffness():
    space = fem.FeSpace(_ref_triangle(), order=1)
    K = fem.assemble_diffusion(space, np.eye(2)).toarray()
    assert np.abs(K - REF_STIFFNESS).max() <= 1e-14
    K2 = fem.assemble_diffusion(space, 2.0 * np.eye(2)).toarray()
    assert np.abs(K2 - 2.0 * REF_STIFFNESS).max() <= 1e-14


def test_stiffness_linear_in_coefficient():
    m = gen_rectangle(0, 0, 1, 1, 3, 3)
    space = fem.FeSpace(m, order=1)
    C = np.array([[2.0, 0.5], [0.5, 1.0]])
    A1 = fem.assemble_diffusion(space, C)
    A2 = fem.assemble_diffusion(space, lambda P: np.broadcast_to(C, P.shape[:-1] + (2, 2)))
    assert abs(A1 - A2).max() <= 1e-14


@pytest.mark.parametrize("order", [1, 2])
def test_mass_partition_of_unity(order):
    for m, area in ((gen_rectangle(0, 0, 2, 1.5, 4, 3), 3.0),
                    (gen_disk((0, 0), 1.0, 3), None)):
        if area is None:
            area = m.area()
        space = fem.FeSpace(m, order=order)
        M = fem.assemble_mass(space)
        total = float(np.ones(space.dof_count) @ (M @ np.ones(space.dof_count)))
        assert abs(total - area) <= 1e-12 * max(1.0, area)


@pytest.mark.parametrize("order", [1, 2])
def test_boundary_mass_perimeter(order):
    m = gen_rectangle(0, 0, 1, 1, 4, 4)
    space = fem.FeSpace(m, order=order)
    Mb = fem.assemble_boundary_mass(space, 1)
    ones = np.ones(space.dof_count)
    assert abs(ones @ (Mb @ ones) - 4.0) <= 1e-12 * 4.0


def test_load_constant_sums_to_area():
    m = gen_disk((0.2, -0.1), 0.8, 3)
    space = fem.FeSpace(m, order=2)
    b = fem.assemble_load(space, lambda P: np.ones(P.shape[:-1]))
    assert abs(b.sum() - m.area()) <= 1e-12 * m.area()


def test_load_linear_moment():
    m = gen_rectangle(0, 0, 1, 1, 5, 5)
    space = fem.FeSpace(m, order=1)
    b = fem.assemble_load(space, lambda P: P[..., 0])
    assert abs(b.sum() - 0.5) <= 1e-12


def test_boundary_load_and_unknown_marker():
    m = gen_rectangle(0, 0, 1, 1, 3, 3)
    space = fem.FeSpace(m, order=1)
    g = fem.assemble_boundary_load(space, 1, lambda P: np.ones(P.shape[:-1]))
    assert abs(g.sum() - 4.0) <= 1e-12 * 4.0
    with pytest.raises(ValueError, match="unknown boundary marker"):
        fem.assemble_boundary_load(space, 7, None)
    with pytest.raises(ValueError, match="unknown boundary marker"):
        fem.assemble_boundary_mass(space, 0)


# ---------------------------------------------------------------- constraints

def test_apply_dirichlet_idempotent():
    m = gen_rectangle(0, 0, 1, 1, 3, 3)
    space = fem.FeSpace(m, order=1)
    A = fem.assemble_diffusion(space, np.eye(2))
    b = fem.assemble_load(space, lambda P: np.ones(P.shape[:-1]))
    dofs = space.boundary_dofs(1)
    vals = space.dof_coords[dofs, 0]
    A1, b1 = fem.apply_dirichlet(A, b, dofs, vals)
    A2, b2 = fem.apply_dirichlet(A1, b1, dofs, vals)
    assert np.array_equal(b1, b2)
    assert abs(A1 - A2).max() == 0.0
    # symmetry preserved
    assert abs(A1 - A1.T).max() <= 1e-14


@pytest.mark.parametrize("order", [1, 2])
def test_patch_test_linear_exact(order):
    # -lap u = 0 with u = 1 + 2x - 3y on the boundary reproduces u exactly
    m = gen_rectangle(0, 0, 1, 1, 4, 3)
    space = fem.FeSpace(m, order=order)

    def uex(P):
        return 1.0 + 2.0 * P[..., 0] - 3.0 * P[..., 1]

    A = fem.assemble_diffusion(space, np.eye(2))
    b = np.zeros(space.dof_count)
    dofs = space.boundary_dofs(1)
    A1, b1 = fem.apply_dirichlet(A, b, dofs, uex(space.dof_coords[dofs]))
    x = fem.solve(A1, b1, symmetric=True)
    assert np.abs(x - uex(space.dof_coords)).max() <= 1e-12


def test_p2_exact_for_harmonic_quadratic():
    # u = x^2 - y^2 is harmonic and quadratic: P2 reproduces it to solver precision
    m = gen_rectangle(0, 0, 1, 1, 3, 3)
    space = fem.FeSpace(m, order=2)

    def uex(P):
        return P[..., 0] ** 2 - P[..., 1] ** 2

    A = fem.assemble_diffusion(space, np.eye(2))
    dofs = space.boundary_dofs(1)
    A1, b1 = fem.apply_dirichlet(A, np.zeros(space.dof_count), dofs, uex(space.dof_coords[dofs]))
    x = fem.solve(A1, b1, symmetric=True)
    assert np.abs(x - uex(space.dof_coords)).max() <= 1e-10


def test_solve_residual_and_singular():
    A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(fem.SolverError):
        fem.solve(A, np.array([1.0, 1.0]))


def test_factorized_matches_solve():
    m = gen_rectangle(0, 0, 1, 1, 4, 4)
    space = fem.FeSpace(m, order=1)
    A = fem.assemble_diffusion(space, np.eye(2)) + fem.assemble_mass(space)
    b = fem.assemble_load(space, lambda P: P[..., 1])
    x1 = fem.solve(A, b, symmetric=True)
    x2 = fem.Factorized(A, symmetric=True).solve(b)
    assert np.abs(x1 - x2).max() <= 1e-12


# ------------------------------------------------------------- interpolation

@pytest.mark.parametrize("order,poly", [(1, "linear"), (2, "quadratic")])
def test_interpolation_exactness(order, poly):
    m = gen_disk((0, 0), 1.0, 2)
    space = fem.FeSpace(m, order=order)

    def f(P):
        if poly == "linear":
            return 0.3 + 1.2 * P[..., 0] - 0.7 * P[..., 1]
        return 0.3 + P[..., 0] - P[..., 1] + 2.0 * P[..., 0] * P[..., 1] - P[..., 1] ** 2

    u = space.interpolate(f)
    assert np.abs(u.coefficients - f(space.dof_coords)).max() <= 1e-14
    rng = np.random.default_rng(2)
    for elem in rng.integers(0, m.n_triangles, size=10):
        lam = rng.dirichlet([1, 1, 1])
        p = lam @ m.nodes[m.triangles[elem]]
        val = fem.eval_field(u, elem, lam)
        assert abs(val - f(p[None, :])[0]) <= 1e-13


def test_eval_gradient_linear_field():
    m = gen_rectangle(0, 0, 1, 1, 2, 2)
    space = fem.FeSpace(m, order=1)
    u = space.interpolate(lambda P: 2.0 * P[..., 0] - 0.5 * P[..., 1])
    g = fem.eval_gradient(u, 3, np.array([0.2, 0.3, 0.5]))
    assert np.abs(g - np.array([2.0, -0.5])).max() <= 1e-13


def test_eval_outside_element_rejected():
    m = gen_rectangle(0, 0, 1, 1, 1, 1)
    space = fem.FeSpace(m, order=1)
    u = space.interpolate(lambda P: P[..., 0])
    with pytest.raises(ValueError, match="outside element"):
        fem.eval_field(u, 0, np.array([-0.1, 0.6, 0.5]))
    with pytest.raises(ValueError, match="barycentric"):
        fem.eval_field(u, 0, np.array([0.5, 0.6, 0.5]))


def test_edge_traces():
    m = gen_rectangle(0, 0, 1, 1, 2, 2)
    space = fem.FeSpace(m, order=2)
    u = space.interpolate(lambda P: P[..., 0] ** 2 + 0.5 * P[..., 1])
    edges = np.arange(len(m.boundary_edges))
    vals = fem.edge_qvalues(u, edges)
    grads = fem.edge_qgrads(u, edges)
    P = space.edge_qpoints[edges]
    assert np.abs(vals - (P[..., 0] ** 2 + 0.5 * P[..., 1])).max() <= 1e-12
    exact = np.stack([2.0 * P[..., 0], np.full(P.shape[:-1], 0.5)], axis=-1)
    assert np.abs(grads - exact).max() <= 1e-11


# ---------------------------------------------------------------- convergence

def _dirichlet_poisson_error(nx, order):
    m = gen_rectangle(0, 0, 1, 1, nx, nx)
    space = fem.FeSpace(m, order=order)

    def uex(P):
        return np.sin(np.pi * P[..., 0]) * np.sin(np.pi * P[..., 1])

    def f(P):
        return 2.0 * np.pi ** 2 * uex(P)

    A = fem.assemble_diffusion(space, np.eye(2))
    b = fem.assemble_load(space, f)
    dofs = space.boundary_dofs(1)
    A1, b1 = fem.apply_dirichlet(A, b, dofs, np.zeros(len(dofs)))
    x = fem.solve(A1, b1, symmetric=True)
    uh = fem.field_qvalues(fem.ScalarField(space, x))
    diff = uh - uex(space.qpoints)
    return np.sqrt(np.sum(space.qweights * diff * diff))


def test_p1_l2_convergence_order():
    errs = [_dirichlet_poisson_error(nx, 1) for nx in (8, 16, 32)]
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 1.9


def test_p2_l2_convergence_order():
    errs = [_dirichlet_poisson_error(nx, 2) for nx in (4, 8, 16)]
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 2.9
