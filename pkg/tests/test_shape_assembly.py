"""Tensor-assembly oracles: dual form vs raw displays, transport FD checks."""

import numpy as np
import pytest

from shapegrad.fem_core import FeSpace
from shapegrad.flow import VectorFieldSpec, make_field
from shapegrad.shape_assembly import (AssembledDerivative, ShapeTensors,
                                      assemble_dJ, cost_transport_derivative,
                                      cost_transport_value, make_manufactured,
                                      material_tensor_rate, prop5_raw_dJ,
                                      prop5_tensors, prop6_raw_dJ,
                                      prop6_tensors, theta_samples,
                                      verify_manufactured)

from conftest import HOLDALL, catalog_thetas, bump_theta


def _sum_fields(a, b):
    return VectorFieldSpec("sum",
                           lambda P: a.eval(P) + b.eval(P),
                           lambda P: a.jac(P) + b.jac(P),
                           lambda P: a.hess(P) + b.hess(P))


def _disk_points(n, rmax=0.9, seed=7):
    rng = np.random.default_rng(seed)
    r = rmax * np.sqrt(rng.uniform(0.02, 1.0, n))
    a = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


# ------------------------------------------------------------- manufactured

@pytest.mark.parametrize("name", ["disk", "disk-higher"])
def test_manufactured_closures_match_fd(name):
    fields = make_manufactured(name)
    assert verify_manufactured(fields, _disk_points(200)) < 1e-8


def test_manufactured_unknown_name():
    with pytest.raises(ValueError, match="unknown manufactured"):
        make_manufactured("nope")


def test_manufactured_higher_source_is_neg_laplacian():
    fields = make_manufactured("disk-higher")
    P = _disk_points(100)
    lap = np.einsum('nii->n', fields.hess_u(P))
    assert np.abs(fields.f(P) + lap).max() < 1e-14


# ---------------------------------------------------- dual form == raw form

def test_tracking_dual_form_matches_raw(disk4):
    fields = make_manufactured("disk")
    tensors = prop5_tensors(fields, disk4)
    for theta in catalog_thetas():
        raw = prop5_raw_dJ(fields, disk4, theta)
        dual = assemble_dJ(disk4, tensors, theta, theta_mode="analytic").total
        assert abs(dual - raw) <= 1e-12 * (1.0 + abs(raw)), theta.name


def test_hessian_dual_form_matches_raw(disk4):
    fields = make_manufactured("disk-higher")
    tensors = prop6_tensors(fields, disk4)
    for theta in catalog_thetas():
        raw = prop6_raw_dJ(fields, disk4, theta)
        dual = assemble_dJ(disk4, tensors, theta, theta_mode="analytic").total
        assert abs(dual - raw) <= 1e-12 * (1.0 + abs(raw)), theta.name


def test_second_order_term_is_exercised(disk4):
    """The curved catalog fields must feed a nonzero S2 contribution."""
    fields = make_manufactured("disk")
    tensors = prop5_tensors(fields, disk4)
    hits = 0
    for theta in catalog_thetas():
        br = assemble_dJ(disk4, tensors, theta, theta_mode="analytic")
        if abs(br.terms["S2"]) > 1e-8:
            hits += 1
    assert hits >= 2


def test_boundary_tensor_normal_component(disk4):
    """n . S1_G n equals +h * dn(p) pointwise on the boundary."""
    fields = make_manufactured("disk")
    tensors = prop5_tensors(fields, disk4)
    space = tensors.space
    n = space.edge_normal
    got = np.einsum('bi,bqij,bj->bq', n, tensors.S1_gamma, n)
    Pe = space.edge_qpoints
    dnp = np.einsum('bqd,bd->bq', fields.grad_p(Pe), n)
    want = fields.h(Pe) * dnp
    assert np.abs(got - want).max() < 1e-13


# ------------------------------------------------------------ assembly basics

def test_constant_tensors_integrate_exactly(disk4):
    space = FeSpace(disk4, order=1)
    M, nq = space.qweights.shape
    c = np.array([0.7, -0.4])
    S0 = np.broadcast_to(c, (M, nq, 2)).copy()
    C = np.array([[0.3, -0.2], [0.1, 0.5]])
    S1 = np.broadcast_to(C, (M, nq, 2, 2)).copy()
    tensors = ShapeTensors(space, S0=S0, S1=S1)

    const = make_field("constant", (0.4, -0.3), support_box=HOLDALL)
    br = assemble_dJ(disk4, tensors, const, theta_mode="interpolated")
    area = disk4.area()
    assert abs(br.terms["S0"] - c @ np.array([0.4, -0.3]) * area) < 1e-13
    assert abs(br.terms["S1"]) < 1e-13  # constant field has zero Jacobian

    A = np.array([0.3, -0.2, 0.1, -0.4, 0.05, 0.1])
    lin = make_field("linear", tuple(A), support_box=HOLDALL)
    br = assemble_dJ(disk4, tensors, lin, theta_mode="interpolated")
    J = np.array([[0.3, -0.2], [0.1, -0.4]])
    assert abs(br.terms["S1"] - np.sum(C * J) * area) < 1e-12


def test_interpolated_matches_analytic_for_linear_theta(disk4):
    """Nodal interpolation is exact for affine velocities, so the two
    sampling modes must agree to roundoff (S2 vanishes either way)."""
    fields = make_manufactured("disk")
    tensors = prop5_tensors(fields, disk4)
    lin = make_field("linear", (0.3, -0.2, 0.1, -0.4, 0.05, 0.1), support_box=HOLDALL)
    a = assemble_dJ(disk4, tensors, lin, theta_mode="analytic")
    b = assemble_dJ(disk4, tensors, lin, theta_mode="interpolated")
    assert abs(a.total - b.total) <= 1e-12 * (1.0 + abs(a.total))


def test_assembly_is_linear_in_theta(disk4):
    fields = make_manufactured("disk")
    tensors = prop5_tensors(fields, disk4)
    t1 = bump_theta()
    t2 = make_field("rotation", (0.7, 0.1, -0.2), support_box=HOLDALL)
    d1 = assemble_dJ(disk4, tensors, t1, theta_mode="analytic").total
    d2 = assemble_dJ(disk4, tensors, t2, theta_mode="analytic").total
    d12 = assemble_dJ(disk4, tensors, _sum_fields(t1, t2), theta_mode="analytic").total
    assert abs(d12 - (d1 + d2)) <= 1e-12 * (1.0 + abs(d12))

    double = make_field("bump", (1.0, 0.6, -0.2, 0.1, 0.9), support_box=HOLDALL)
    dd = assemble_dJ(disk4, tensors, double, theta_mode="analytic").total
    assert abs(dd - 2.0 * d1) <= 1e-12 * (1.0 + abs(dd))


def test_breakdown_sums_to_total(disk4):
    fields = make_manufactured("disk")
    tensors = prop5_tensors(fields, disk4)
    br = assemble_dJ(disk4, tensors, bump_theta(), theta_mode="analytic")
    assert isinstance(br, AssembledDerivative)
    assert set(br.terms) == {"S0", "S1", "S2", "S0_gamma", "S1_gamma"}
    assert abs(br.total - sum(br.terms.values())) < 1e-15


def test_assemble_validates_inputs(disk4, disk3):
    fields = make_manufactured("disk")
    tensors = prop5_tensors(fields, disk4)
    with pytest.raises(ValueError, match="different mesh"):
        assemble_dJ(disk3, tensors, bump_theta())
    with pytest.raises(ValueError, match="unknown theta sampling mode"):
        assemble_dJ(disk4, tensors, bump_theta(), theta_mode="nope")
    with pytest.raises(ValueError, match="full.*tangential|tangential.*full"):
        ShapeTensors(FeSpace(disk4), boundary_pairing="sideways")


def test_material_tensor_rate_formula(disk4):
    """rate(M) = div M - J M - M J^T, checked entrywise against loops."""
    rng = np.random.default_rng(5)
    space = FeSpace(disk4, order=1)
    samples = theta_samples(space, bump_theta(), "analytic")
    M = np.array([[2.0, 0.3], [0.3, 1.0]])
    rate = material_tensor_rate(M, samples)
    m, q = 17, 2
    J = samples.vol_jac[m, q]
    want = samples.vol_div[m, q] * M - J @ M - M @ J.T
    assert np.abs(rate[m, q] - want).max() < 1e-15
    del rng


# ---------------------------------------------------------- frozen-state cost

def test_cost_transport_derivative_matches_fd(disk4):
    fields = make_manufactured("disk")
    theta = bump_theta()
    d = cost_transport_derivative(fields, disk4, theta)
    svals = np.array([0.04, 0.02, 0.01])
    errs = []
    for s in svals:
        jp = cost_transport_value(fields, disk4, theta, +s)
        jm = cost_transport_value(fields, disk4, theta, -s)
        errs.append(abs((jp - jm) / (2 * s) - d))
    errs = np.array(errs)
    order = np.polyfit(np.log(svals), np.log(errs), 1)[0]
    assert order > 1.9
    assert errs[-1] <= 1e-4 * (1.0 + abs(d))
