#!/usr/bin/env python

"""Tests for `balanced_pod_tools.steady`."""
import numpy as np
import pytest
import scipy.linalg as la

from balanced_pod_tools.errors import ConvergenceError, ValidationError
from balanced_pod_tools.steady import (FixedPointProblem, SemiImplicitStepper, continuation, gmres, jacobian_vector,
                                       newton_gmres)

rng = np.random.default_rng(21)
A_test = np.eye(20) + 0.1 * rng.standard_normal((20, 20))
b_test = rng.standard_normal(20)


def test_gmres_solves_well_conditioned_system():
    result = gmres(lambda v: A_test @ v, b_test, tol=1e-10)
    assert result.converged
    np.testing.assert_allclose(result.x, la.solve(A_test, b_test), rtol=1e-8)
    # residual history starts at one and never increases
    assert result.residuals[0] == pytest.approx(1.0)
    assert np.all(np.diff(result.residuals) <= 1e-12)


def test_gmres_restarts():
    result = gmres(lambda v: A_test @ v, b_test, tol=1e-10, restart=5, max_iter=200)
    assert result.converged
    assert result.restarts > 0


def test_gmres_zero_rhs():
    result = gmres(lambda v: A_test @ v, np.zeros(20))
    assert result.converged and result.iterations == 0
    np.testing.assert_array_equal(result.x, 0.0)


def test_gmres_happy_breakdown():
    # b lies in a two-dimensional invariant subspace
    A = np.diag([2.0, 3.0, 5.0, 7.0])
    result = gmres(lambda v: A @ v, np.array([1.0, 1.0, 0.0, 0.0]), tol=1e-14)
    assert result.iterations == 2
    np.testing.assert_allclose(result.x, [0.5, 1.0 / 3.0, 0.0, 0.0], atol=1e-12)


def test_gmres_rejects_nonfinite_rhs():
    with pytest.raises(ValidationError):
        gmres(lambda v: v, np.array([1.0, np.nan]))


def test_jacobian_vector_of_quadratic():
    g = lambda x: x ** 2
    x = np.array([1.0, 2.0])
    v = np.array([1.0, 0.0])
    np.testing.assert_allclose(jacobian_vector(g, x, v), [2.0, 0.0], atol=1e-6)
    with pytest.raises(ValidationError):
        jacobian_vector(g, x, np.zeros(2))


def affine_problem(**settings):
    """Flow of ``x' = -(x - c)`` advanced exactly; the fixed point is ``c``."""
    c = np.array([1.0, -2.0, 0.5])

    def flow(x, steps):
        return c + np.exp(-0.01 * steps) * (x - c)

    return FixedPointProblem(flow, T=50, **settings), c


def test_newton_finds_affine_fixed_point():
    problem, c = affine_problem()
    x, report = newton_gmres(problem, np.zeros(3))
    assert report.converged
    np.testing.assert_allclose(x, c, atol=1e-9)
    assert report.iterations <= 3
    frame = report.to_frame()
    assert list(frame.columns) == ['iteration', 'residual', 'gmres_iterations', 'step_length']


def test_newton_converges_superlinearly():
    # x0' = -2 x0 + x1 - x0^3, x1' = 0.5 - x1: strongly nonlinear far out along x0
    L = np.array([[-2.0, 1.0], [0.0, -1.0]])
    stepper = SemiImplicitStepper(L, lambda x: np.array([-x[0] ** 3, 0.5]), 0.01)
    problem = FixedPointProblem(stepper.flow, T=50, gmres_tol=1e-12)
    x, report = newton_gmres(problem, np.array([3.0, 0.0]))
    assert report.converged
    np.testing.assert_allclose(L @ x + np.array([-x[0] ** 3, 0.5]), 0.0, atol=1e-8)

    residuals = np.array(report.residuals)
    near = residuals[residuals < 0.1]
    ratios = near[1:] / near[:-1]
    assert ratios.size >= 2
    # each step near the root contracts harder than the last
    assert np.all(np.diff(ratios) < 0)
    assert ratios[-1] < 1e-3


def test_newton_reports_failure():
    problem, _ = affine_problem(max_newton=1, gmres_tol=0.5)
    with pytest.raises(ConvergenceError) as err:
        newton_gmres(problem, np.full(3, 100.0))
    assert not err.value.report.converged


def test_fixed_point_problem_validates():
    with pytest.raises(ValidationError):
        FixedPointProblem(lambda x, n: x, T=0)


def test_semi_implicit_fixed_point_is_steady_state():
    L = np.array([[-2.0, 1.0], [0.0, -1.0]])
    N = lambda x: np.array([-x[0] ** 3, 0.5])
    stepper = SemiImplicitStepper(L, N, 0.01)
    x = stepper.advance(np.zeros(2), 5000)
    np.testing.assert_allclose(L @ x + N(x), 0.0, atol=1e-10)
    # flow does not carry history between calls
    np.testing.assert_array_equal(stepper.flow(np.zeros(2), 10), stepper.flow(np.zeros(2), 10))


def test_continuation_brackets_crossing():
    # x' = mu x + y - x (x^2 + y^2), y' = -x + mu y - y (x^2 + y^2): eigenvalues mu +/- i at the origin
    def family(mu):
        L = np.array([[mu, 1.0], [-1.0, mu]])
        stepper = SemiImplicitStepper(L, lambda x: -np.sum(x ** 2) * x, 0.01)
        return FixedPointProblem(stepper.flow, T=50)

    jacobian = lambda mu, x: np.array([[mu, 1.0], [-1.0, mu]])
    branch = continuation(family, -0.3, 0.3, 0.2, np.zeros(2), jacobian=jacobian, n_eigs=2)
    np.testing.assert_allclose(branch.parameters, [-0.3, -0.1, 0.1, 0.3], atol=1e-12)
    assert branch.critical_bracket() == pytest.approx((-0.1, 0.1))
    assert not branch.terminated
    assert len(branch.to_frame()) == 4


def test_continuation_rejects_wrong_direction():
    with pytest.raises(ValidationError):
        continuation(lambda mu: None, 0.0, 1.0, -0.1, np.zeros(2))
