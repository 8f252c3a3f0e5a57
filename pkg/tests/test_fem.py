import math
import threading

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from spdeinv import fem
from spdeinv.errors import CholeskyFailure, EmptyPartition, NonMonotonePartition, SolverBreakdown
from spdeinv.fem import (
    FemOperator,
    Mesh,
    NodalField,
    TridiagonalMatrix,
    TridiagonalSolver,
    assemble,
    build_mesh,
    generalized_eigs,
    l2_project,
    ritz_project,
    semi_implicit_solve,
    trace_neg_half_power,
    uniform_eigenvalues,
)
from spdeinv.spectral import eigen_pair, eigenvalues

PI2 = math.pi**2


def uniform(n):
    return FemOperator(build_mesh(uniform_n=n))


def slope(hs, errs):
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


e0 = lambda xi: eigen_pair(0).evaluate_at(xi)
de0 = lambda xi: math.sqrt(2) * math.pi * np.cos(math.pi * np.asarray(xi))

interior_sets = st.lists(st.floats(0.01, 0.99), min_size=1, max_size=40, unique=True).map(sorted).filter(
    lambda p: np.all(np.diff(p) > 1e-3) if len(p) > 1 else True)


# --- meshes ------------------------------------------------------------------

def test_uniform_mesh():
    m = build_mesh(uniform_n=3)
    np.testing.assert_array_equal(m.nodes, [0, 0.25, 0.5, 0.75, 1])
    assert m.h == 0.25
    assert m.is_uniform


def test_nonuniform_mesh_h_is_max_gap():
    assert build_mesh(interior_points=[0.1, 0.5]).h == 0.5


@pytest.mark.parametrize("pts", [[0.5, 0.2], [0.3, 0.3], [0.0, 0.5], [0.5, 1.2]])
def test_bad_partitions(pts):
    with pytest.raises(NonMonotonePartition):
        build_mesh(interior_points=pts)


def test_empty_partition():
    with pytest.raises(EmptyPartition):
        build_mesh(interior_points=[])
    with pytest.raises(EmptyPartition):
        build_mesh(uniform_n=0)
    with pytest.raises(EmptyPartition):
        Mesh([0.0, 1.0])


@given(interior_sets)
def test_mesh_json_round_trip(pts):
    m = build_mesh(interior_points=pts)
    m2 = Mesh.from_json(m.to_json())
    np.testing.assert_array_equal(m.nodes, m2.nodes)
    assert 0 < m.h < 1


# --- assembly ----------------------------------------------------------------

def test_assembly_uniform_3():
    op = assemble(build_mesh(uniform_n=3))
    np.testing.assert_allclose(op.stiffness.diag, 8.0)
    np.testing.assert_allclose(op.stiffness.sub, -4.0)
    np.testing.assert_allclose(op.mass.diag, 1 / 6)
    np.testing.assert_allclose(op.mass.sub, 1 / 24)
    assert op.mass.is_symmetric and op.stiffness.is_symmetric


def test_assembly_uniform_1():
    op = uniform(1)
    np.testing.assert_allclose(op.stiffness.to_dense(), [[4.0]])
    np.testing.assert_allclose(op.mass.to_dense(), [[1 / 3]])
    assert op.eigenvalues[0] == pytest.approx(12.0)
    assert op.eigenvalues[0] >= PI2


def test_smallest_eigenvalue_above_continuous():
    assert uniform(3).eigenvalues[0] >= PI2


def test_mass_matrix_integrates_hat_products():
    # brute-force quadrature of phi_i phi_j on a nonuniform mesh
    m = build_mesh(interior_points=[0.1, 0.35, 0.4, 0.8])
    op = FemOperator(m)
    xi = np.linspace(0, 1, 200001)
    hats = np.array([np.interp(xi, m.nodes, np.eye(m.nodes.size)[j + 1]) for j in range(m.n_interior)])
    Mq = scipy.integrate.trapezoid(hats[:, None, :] * hats[None, :, :], xi, axis=-1)
    np.testing.assert_allclose(op.mass.to_dense(), Mq, atol=1e-8)


def test_cholesky_failure_on_indefinite():
    T = TridiagonalMatrix(np.array([2.0]), np.array([1.0, 1.0]), np.array([2.0]))
    with pytest.raises(CholeskyFailure):
        fem._banded_cholesky(T)
    with pytest.raises(SolverBreakdown):
        TridiagonalSolver(T)


def test_mass_cholesky_factor():
    op = FemOperator(build_mesh(interior_points=[0.2, 0.3, 0.7]))
    C = op.mass_cholesky_apply(np.eye(op.n))
    np.testing.assert_allclose(C @ C.T, op.mass.to_dense(), atol=1e-15)


# --- eigenpairs --------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 3, 15, 63, 255])
def test_uniform_eigenvalues_closed_form(n):
    np.testing.assert_allclose(uniform(n).eigenvalues, uniform_eigenvalues(n), rtol=1e-10)


def test_closed_form_against_dense_solver():
    op = uniform(31)
    ref = scipy.linalg.eigh(op.stiffness.to_dense(), op.mass.to_dense(), eigvals_only=True)
    np.testing.assert_allclose(uniform_eigenvalues(31), ref, rtol=1e-10)


@settings(max_examples=30, deadline=None)
@given(interior_sets)
def test_eigenpairs_residual_and_orthonormality(pts):
    op = FemOperator(build_mesh(interior_points=pts))
    lams, V = op.eigen
    assert np.all(np.diff(lams) > 0)
    K, M = op.stiffness.to_dense(), op.mass.to_dense()
    res = np.abs(K @ V - M @ V * lams).max(axis=0)
    assert np.all(res <= 1e-8 * lams)
    np.testing.assert_allclose(V.T @ M @ V, np.eye(op.n), atol=1e-10)
    assert lams[0] >= PI2


def test_generalized_eigs_returns_fields():
    pairs = generalized_eigs(uniform(7))
    assert len(pairs) == 7
    assert all(isinstance(v, NodalField) for _, v in pairs)
    assert pairs[0][1].norm() == pytest.approx(1.0)


def test_first_eigenvalue_approaches_from_above():
    lam = [uniform(n).eigenvalues[0] for n in (7, 15, 31, 63)]
    assert all(a > b > PI2 for a, b in zip(lam, lam[1:]))
    assert lam[-1] <= 1.05 * PI2


def test_eigen_computed_once_under_threads():
    op = uniform(255)
    out = []
    ts = [threading.Thread(target=lambda: out.append(op.eigen)) for _ in range(8)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert all(o is out[0] for o in out)


# --- projections -------------------------------------------------------------

def test_l2_project_reproduces_vh():
    op = FemOperator(build_mesh(interior_points=[0.1, 0.4, 0.45, 0.9]))
    v = np.array([0.3, -1.0, 2.0, 0.5])
    f = lambda xi: fem.interpolate(op.mesh, v, xi)
    np.testing.assert_allclose(l2_project(op, f).values, v, atol=1e-10)


def test_l2_project_zero():
    assert np.all(l2_project(uniform(5), lambda xi: np.zeros_like(xi)).values == 0)


def test_l2_projection_rate():
    ns = [15, 31, 63, 127]
    errs = [fem.l2_error(op, l2_project(op, e0).values, e0) for op in map(uniform, ns)]
    assert slope([1 / (n + 1) for n in ns], errs) == pytest.approx(2.0, abs=0.2)


def test_ritz_reproduces_vh():
    op = FemOperator(build_mesh(interior_points=[0.2, 0.25, 0.6]))
    v = np.array([1.0, -0.5, 0.25])
    f = lambda xi: fem.interpolate(op.mesh, v, xi)
    np.testing.assert_allclose(ritz_project(op, f).values, v, atol=1e-10)


def test_ritz_is_energy_orthogonal():
    op = FemOperator(build_mesh(interior_points=[0.15, 0.3, 0.6, 0.7]))
    r = ritz_project(op, e0).values
    # <(f - R f)', phi_j'> = 0: compare with the Galerkin system solved densely
    xi, s, w = fem.element_quadrature(op.mesh, 5)
    slopes = 1.0 / op.mesh.gaps
    b = np.array([np.sum(w[j] * de0(xi[j])) * slopes[j] - np.sum(w[j + 1] * de0(xi[j + 1])) * slopes[j + 1]
                  for j in range(op.n)])
    np.testing.assert_allclose(r, np.linalg.solve(op.stiffness.to_dense(), b), atol=1e-10)


def test_ritz_rates():
    ns = [15, 31, 63, 127]
    ops = [uniform(n) for n in ns]
    hs = [op.h for op in ops]
    l2 = [fem.l2_error(op, ritz_project(op, e0).values, e0) for op in ops]
    en = [fem.energy_error(op, ritz_project(op, e0).values, de0) for op in ops]
    assert slope(hs, l2) == pytest.approx(2.0, abs=0.2)
    assert slope(hs, en) == pytest.approx(1.0, abs=0.1)


def test_projection_error_scaling():
    ns = [15, 31, 63, 127, 255]
    errs = [fem.l2_error(op, l2_project(op, e0).values, e0) for op in map(uniform, ns)]
    assert slope([1 / (n + 1) for n in ns], errs) == pytest.approx(2.0, abs=0.2)


# --- traces and smoothing ----------------------------------------------------

def test_trace_single_node():
    assert trace_neg_half_power(uniform(1), 0.25) == pytest.approx(12**-0.75, rel=1e-12)
    assert trace_neg_half_power(uniform(1), 0.25) == pytest.approx(0.1551, abs=1e-4)


def test_trace_bounded_increasing():
    vals = [trace_neg_half_power(uniform(n), 0.25) for n in (15, 31, 63, 127)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    # lam_j^h >= lam_j bounds every term by its continuous counterpart
    assert vals[-1] < float(np.sum(eigenvalues(10**6) ** -0.75)) + 1e-3


def test_trace_near_half():
    val = trace_neg_half_power(uniform(127), 0.4999999)
    assert val <= (1 / 6) * 1.1


def test_spectral_contraction():
    for n in (15, 63):
        for tau in (0.1, 0.01):
            lams = uniform(n).eigenvalues
            assert np.all(1 / (1 + tau * lams) <= 1 / (1 + tau * PI2))
            assert 1 / (1 + tau * PI2) < 1


def test_discrete_smoothing():
    lams = np.concatenate([uniform(n).eigenvalues for n in (15, 63, 255)])
    bad = fem.discrete_smoothing_violations(lams, [0.0, 0.25, 0.5], range(1, 201), [0.1, 0.01])
    assert bad == []


def test_smoothing_detects_violation():
    # the bound assumes lam >= lam_0; a smaller eigenvalue must be flagged
    assert fem.discrete_smoothing_violations([0.01], [0.5], [100], [0.1]) == [(0.5, 100, 0.1)]


@pytest.mark.parametrize("alpha", [-0.5, 0.5])
def test_norm_equivalence_envelope(alpha):
    rng = np.random.default_rng(11)
    ratios = []
    for n in (15, 31, 63, 127, 255):
        op = uniform(n)
        for _ in range(5):
            v = rng.standard_normal(n)
            ratios.append(fem.continuous_frac_norm(op, v, alpha) / op.frac_power_norm(alpha, v))
    assert 0.3 <= min(ratios) and max(ratios) <= 3.5


def test_sine_coefficients_exact():
    op = FemOperator(build_mesh(interior_points=[0.2, 0.3, 0.65]))
    v = np.array([1.0, -2.0, 0.5])
    f = lambda xi: fem.interpolate(op.mesh, v, xi)
    xi = np.linspace(0, 1, 400001)
    quad = [scipy.integrate.trapezoid(f(xi) * eigen_pair(k).evaluate_at(xi), xi) for k in range(5)]
    np.testing.assert_allclose(fem.sine_coefficients(op, v, 5), quad, atol=1e-9)


# --- semi-implicit solve -----------------------------------------------------

@given(st.floats(1e-4, 1.0), st.integers(1, 40))
def test_solve_round_trip(tau, n):
    op = uniform(n)
    y = np.random.default_rng(n).standard_normal(n)
    rhs = (op.mass + op.stiffness.scaled(tau)).matvec(y)
    np.testing.assert_allclose(semi_implicit_solve(op, tau, rhs).values, y, rtol=1e-10, atol=1e-12)


def test_solve_on_eigenvector():
    op = uniform(31)
    tau = 0.05
    lams, V = op.eigen
    for j in (0, 7, 30):
        x = semi_implicit_solve(op, tau, op.mass.matvec(V[:, j])).values
        np.testing.assert_allclose(x, V[:, j] / (1 + tau * lams[j]), atol=1e-10)


def test_solve_tau_zero_is_mass_inverse():
    op = uniform(9)
    y = np.arange(9.0)
    np.testing.assert_allclose(semi_implicit_solve(op, 0.0, op.mass.matvec(y)).values, y, atol=1e-10)


def test_nodal_field_validates():
    op = uniform(3)
    with pytest.raises(ValueError):
        NodalField(np.zeros(4), op)
    with pytest.raises(ValueError):
        NodalField(np.array([0.0, np.nan, 0.0]), op)
    assert NodalField(np.ones(3), op).norm() >= 0
