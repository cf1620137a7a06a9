#!/usr/bin/env python

"""Tests for `balanced_pod_tools.linops`."""
import numpy as np
import pytest
import scipy.linalg as la

from balanced_pod_tools.errors import StabilityError, StabilizabilityError, ValidationError
from balanced_pod_tools.linops import (InnerProductWeight, LinearOperator, StateSpaceSystem, Stepper,
                                       adjoint_residual, eig_dense, finite_horizon_gramian, propagate, solve_care,
                                       solve_lyapunov, svd, weighted_inner, weighted_orthonormalize)

rng = np.random.default_rng(11)
n = 6
M = rng.standard_normal((n, n))
W_dense = M @ M.T + n * np.eye(n)


@pytest.fixture
def weight():
    return InnerProductWeight.from_matrix(W_dense)


def test_weight_rejects_nonsymmetric():
    with pytest.raises(ValidationError, match='symmetric'):
        InnerProductWeight.from_matrix(np.triu(W_dense))


def test_weight_rejects_nonpositive_diagonal():
    with pytest.raises(ValidationError):
        InnerProductWeight.from_diagonal([1.0, 0.0, 2.0])


def test_weight_factor_reproduces_matrix(weight):
    F = weight.factor_matrix
    np.testing.assert_allclose(F.T @ F, W_dense, rtol=1e-12)
    x = rng.standard_normal(n)
    np.testing.assert_allclose(weight.factor_solve(weight.factor(x)), x, rtol=1e-10)
    np.testing.assert_allclose(weight.solve(weight.apply(x)), x, rtol=1e-10)


def test_weighted_inner_dimension_mismatch():
    with pytest.raises(ValidationError, match='dimension mismatch'):
        weighted_inner(np.ones(3), np.ones(4))


def test_dense_adjoint_is_weighted_transpose(weight):
    A = LinearOperator.from_matrix(rng.standard_normal((n, n)), weight)
    assert adjoint_residual(A, trials=20) <= 1e-12
    x, z = rng.standard_normal(n), rng.standard_normal(n)
    assert weight.inner(A.apply(x), z) == pytest.approx(weight.inner(x, A.apply_adjoint(z)), rel=1e-10, abs=1e-10)


def test_callback_operator_matches_dense(weight):
    A = rng.standard_normal((n, n))
    dense = LinearOperator.from_matrix(A, weight)
    callbacks = LinearOperator.from_callbacks(n, lambda x: A @ x, lambda z: dense.adjoint_matrix @ z, weight)
    np.testing.assert_allclose(callbacks.to_dense(), A, rtol=1e-12)
    assert callbacks.norm_estimate(iterations=500) == pytest.approx(dense.norm_estimate(), rel=1e-3)
    with pytest.raises(ValidationError, match='refusing to densify'):
        callbacks.to_dense(cap=3)


def test_system_validates_shapes():
    A = LinearOperator.from_matrix(np.eye(3))
    with pytest.raises(ValidationError, match='B has'):
        StateSpaceSystem(A, np.ones((2, 1)), np.ones((1, 3)))
    system = StateSpaceSystem(A, np.ones(3), np.ones(3))
    assert (system.p, system.q) == (1, 1)


def test_stepper_rejects_bad_arguments():
    A = LinearOperator.from_matrix(-np.eye(2))
    with pytest.raises(ValidationError):
        Stepper(A, 0.0)
    with pytest.raises(ValidationError):
        Stepper(A, 0.1, scheme='euler')


def test_crank_nicolson_is_second_order():
    A = np.array([[-1.0, 2.0], [-2.0, -1.0]])
    x0 = np.array([1.0, 0.0])
    exact = la.expm(A) @ x0
    errors = []
    for dt in (0.1, 0.05):
        stepper = Stepper(LinearOperator.from_matrix(A), dt)
        errors.append(np.linalg.norm(stepper.advance(x0, int(round(1.0 / dt))) - exact))
    assert 3.5 < errors[0] / errors[1] < 4.5


def test_exact_scheme_with_held_input():
    A = np.array([[-2.0]])
    B = np.array([[1.0]])
    stepper = Stepper(LinearOperator.from_matrix(A), 0.5, scheme='exact-expm', B=B)
    x = stepper.advance(np.zeros(1), 40, u=np.array([1.0]))
    # steady state of x' = -2 x + 1
    np.testing.assert_allclose(x, [0.5], rtol=1e-10)
    np.testing.assert_allclose(propagate(A, np.ones(1), 0.5, 'exact-expm'), np.exp([-1.0]), rtol=1e-12)


def test_svd_orders_singular_values():
    U, s, V = svd(rng.standard_normal((5, 3)))
    assert np.all(np.diff(s) <= 0)
    assert U.shape == (5, 3) and V.shape == (3, 3)


def test_eig_dense_real_block_form():
    A = rng.standard_normal((n, n))
    eig = eig_dense(A)
    np.testing.assert_allclose(A @ eig.right, eig.right @ eig.blocks, atol=1e-10)
    np.testing.assert_allclose(eig.left.T @ eig.right, np.eye(n), atol=1e-10)
    assert np.all(np.diff(eig.values.real) <= 1e-12)


def test_lyapunov_matches_gramian_integral():
    A = np.array([[-1.0, 0.5], [0.0, -2.0]])
    Q = np.array([[1.0, 0.2], [0.2, 0.5]])
    X = solve_lyapunov(A, Q)
    np.testing.assert_allclose(A @ X + X @ A.T + Q, 0.0, atol=1e-12)
    np.testing.assert_allclose(finite_horizon_gramian(A, Q, 10.0), X, rtol=1e-7)


def test_lyapunov_requires_stable_matrix():
    with pytest.raises(StabilityError):
        solve_lyapunov(np.diag([0.5, -1.0]), np.eye(2))


def test_scalar_riccati():
    # 2P - P^2 + 3 = 0 has the stabilizing root P = 3
    P = solve_care(np.array([[1.0]]), np.array([[1.0]]), np.array([[3.0]]), np.array([[1.0]]))
    np.testing.assert_allclose(P, [[3.0]], rtol=1e-10)


def test_riccati_unreachable_unstable_mode():
    with pytest.raises(StabilizabilityError):
        solve_care(np.diag([1.0, -1.0]), np.array([[0.0], [1.0]]), np.eye(2), np.eye(1))


def test_weighted_orthonormalize(weight):
    Q = weighted_orthonormalize(rng.standard_normal((n, 3)), weight)
    np.testing.assert_allclose(weight.gram(Q, Q), np.eye(3), atol=1e-12)
    # a positive multiple of a single column maps to its unit vector
    v = rng.standard_normal((n, 1))
    np.testing.assert_allclose(weighted_orthonormalize(5.0 * v, weight), v / weight.norm(v), rtol=1e-12)
