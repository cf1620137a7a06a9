#!/usr/bin/env python

"""Tests for `balanced_pod_tools.testbed`."""
from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg as la

from balanced_pod_tools.errors import ValidationError
from balanced_pod_tools.linops import adjoint_residual
from balanced_pod_tools.steady import newton_gmres
from balanced_pod_tools.testbed import (HopfPlant, RandomLti, TestbedSpec as PlantSpec, build_testbed, hopf_pde,
                                       hopf_scan, random_lti)

from .conftest import match_eigenvalues

# the unforced origin loses stability at (pi / length)^2 nu + U^2 / (4 nu) on the continuum
continuum_critical = (np.pi / 6.0) ** 2 + 0.25


def test_random_lti_has_prescribed_spectrum(unstable_lti):
    A = unstable_lti.system.A.matrix
    assert match_eigenvalues(unstable_lti.eigenvalues, la.eigvals(A), atol=1e-9)
    assert np.sum(unstable_lti.eigenvalues.real > 0) == 2
    assert np.min(unstable_lti.eigenvalues.real[:2]) >= 0.1
    assert np.max(unstable_lti.eigenvalues.real[2:]) <= -0.5
    assert np.linalg.cond(unstable_lti.V) == pytest.approx(10.0, rel=1e-8)


def test_random_lti_is_reproducible():
    first = random_lti(5, 1, seed=42)
    second = random_lti(5, 1, seed=42)
    np.testing.assert_array_equal(first.system.A.matrix, second.system.A.matrix)
    np.testing.assert_array_equal(first.system.B, second.system.B)


@pytest.mark.parametrize('weighted', [False, True])
def test_random_lti_eigenspaces(weighted):
    lti = random_lti(6, 2, seed=9, weighted=weighted)
    A = lti.system.A
    block = lti.Lambda[:2, :2]
    np.testing.assert_allclose(A.apply(lti.right), lti.right @ block, atol=1e-10)
    np.testing.assert_allclose(A.apply_adjoint(lti.left), lti.left @ block.T, atol=1e-10)


def test_random_lti_validates():
    with pytest.raises(ValidationError):
        random_lti(4, 4)
    with pytest.raises(ValidationError):
        random_lti(4, 1, gaps=(0.0, 0.1))


def test_spec_validation():
    with pytest.raises(ValidationError, match='grid'):
        PlantSpec(grid=16).validate()
    with pytest.raises(ValidationError, match='sensor'):
        PlantSpec(sensors=[200]).validate()
    with pytest.raises(ValidationError):
        PlantSpec(kind='lorenz').validate()


def test_default_sensor_rows():
    assert PlantSpec().sensor_rows() == [38, 48]
    assert PlantSpec(kind='random-lti').sensor_rows() == [0, 1]


def test_build_testbed_dispatches():
    assert isinstance(build_testbed(PlantSpec(kind='random-lti', n=4, n_u=1)), RandomLti)
    assert isinstance(build_testbed(PlantSpec(grid=32)), HopfPlant)


def test_hopf_geometry(hopf_plant):
    assert hopf_plant.n == 64
    assert hopf_plant.h == pytest.approx(6.0 / 33)
    assert hopf_plant.B.shape == (64, 1)
    np.testing.assert_array_equal(hopf_plant.B[32:], 0.0)
    np.testing.assert_array_equal(hopf_plant.forcing[32:], 0.0)


def test_hopf_jacobian_matches_finite_differences(hopf_plant):
    rng = np.random.default_rng(0)
    x = 0.5 * rng.standard_normal(hopf_plant.n)
    w = rng.standard_normal(hopf_plant.n)
    eps = 1e-6
    fd = (hopf_plant.rhs(x + eps * w) - hopf_plant.rhs(x - eps * w)) / (2 * eps)
    np.testing.assert_allclose(hopf_plant.jacobian(x) @ w, fd, rtol=1e-6, atol=1e-6)


def test_hopf_jacobian_action_and_adjoint(hopf_plant):
    rng = np.random.default_rng(1)
    x = 0.3 * rng.standard_normal(hopf_plant.n)
    w = rng.standard_normal(hopf_plant.n)
    J = hopf_plant.jacobian(x)
    np.testing.assert_allclose(hopf_plant.jacobian_action(x, w), J @ w, atol=1e-10)
    np.testing.assert_allclose(hopf_plant.jacobian_action(x, w, adjoint=True), J.T @ w, atol=1e-10)
    assert adjoint_residual(hopf_plant.jacobian_operator(x), trials=20) <= 1e-10


def test_hopf_twist_enters_jacobian():
    plant = HopfPlant(PlantSpec(grid=32, twist=0.7))
    x = np.full(plant.n, 0.2)
    w = np.zeros(plant.n)
    w[3] = 1.0
    eps = 1e-6
    fd = (plant.rhs(x + eps * w) - plant.rhs(x - eps * w)) / (2 * eps)
    np.testing.assert_allclose(plant.jacobian(x) @ w, fd, atol=1e-6)


def test_hopf_critical_parameter(hopf_spec):
    plant = HopfPlant(replace(hopf_spec, forcing_amplitude=0.0))
    mu_c = plant.critical_parameter()
    assert mu_c == pytest.approx(continuum_critical, abs=0.02)
    vals = la.eigvals(plant.with_mu(mu_c).jacobian(np.zeros(plant.n)))
    assert np.max(vals.real) == pytest.approx(0.0, abs=1e-8)


def test_hopf_steady_state_below_onset(hopf_spec):
    plant = HopfPlant(replace(hopf_spec, mu=0.3))
    x, report = newton_gmres(plant.fixed_point_problem(0.01, 50), np.zeros(plant.n))
    assert report.converged
    # forced steady state is nonzero and is an exact equilibrium of the plant
    assert plant.energy(x) > 0.0
    assert np.max(np.abs(plant.rhs(x))) < 1e-6


def test_hopf_pde_factory(hopf_spec):
    nonlinear, linearize = hopf_pde(hopf_spec)
    assert nonlinear.is_nonlinear
    assert nonlinear.q == nonlinear.n == 64
    linear = linearize(np.zeros(64))
    assert not linear.is_nonlinear
    np.testing.assert_allclose(linear.A.matrix, nonlinear.A.matrix)


def test_hopf_scan_brackets_onset(hopf_spec):
    spec = replace(hopf_spec, forcing_amplitude=0.0)
    mu_c = HopfPlant(spec).critical_parameter()
    scan = hopf_scan(spec, (0.3, 0.8), 0.1)
    assert scan.bracket is not None
    assert scan.bracket[0] <= mu_c <= scan.bracket[1]
