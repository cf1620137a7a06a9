#!/usr/bin/env python

"""Tests for `balanced_pod_tools.spectral`."""
import numpy as np
import pytest

from balanced_pod_tools.errors import SingularPairingError, ValidationError
from balanced_pod_tools.linops import InnerProductWeight
from balanced_pod_tools.spectral import (BiorthogonalPair, biorthonormalize, leading_eigenvalues, principal_angles,
                                         stable_projector, subspace_distance, unstable_eigenspace)
from balanced_pod_tools.testbed import random_lti

from .conftest import match_eigenvalues


@pytest.fixture(scope='module')
def weighted_lti():
    return random_lti(6, 2, p=1, q=2, gaps=(0.1, 0.5), seed=7, weighted=True)


def test_biorthonormalize_pairs_bases(weighted_lti):
    W = weighted_lti.system.weight
    pair = biorthonormalize(weighted_lti.right, weighted_lti.left, W)
    np.testing.assert_allclose(pair.pairing(), np.eye(2), atol=1e-12)
    np.testing.assert_allclose(W.gram(pair.phi, pair.phi), np.eye(2), atol=1e-12)
    # column spans are unchanged
    assert subspace_distance(pair.phi, weighted_lti.right, W) < 1e-10
    assert subspace_distance(pair.psi, weighted_lti.left, W) < 1e-10


def test_biorthonormalize_orthogonal_spaces():
    phi = np.array([[1.0], [0.0], [0.0]])
    psi = np.array([[0.0], [1.0], [0.0]])
    with pytest.raises(SingularPairingError):
        biorthonormalize(phi, psi)


def test_biorthonormalize_shape_mismatch():
    with pytest.raises(ValidationError, match='differ in shape'):
        biorthonormalize(np.ones((4, 2)), np.ones((4, 1)))


def test_empty_pair_gives_identity_projector():
    projector = stable_projector(BiorthogonalPair.empty(InnerProductWeight.identity(3)))
    x = np.arange(3.0)
    np.testing.assert_array_equal(projector.apply(x), x)
    assert projector.n_unstable == 0


def test_stable_projector_properties(weighted_lti):
    W = weighted_lti.system.weight
    projector = stable_projector(biorthonormalize(weighted_lti.right, weighted_lti.left, W))
    rng = np.random.default_rng(0)
    x, z = rng.standard_normal(6), rng.standard_normal(6)

    np.testing.assert_allclose(projector.apply(weighted_lti.right), 0.0, atol=1e-12)
    np.testing.assert_allclose(projector.apply(projector.apply(x)), projector.apply(x), atol=1e-12)
    np.testing.assert_allclose(projector.unstable_coefficients(projector.apply(x)), 0.0, atol=1e-12)
    assert W.inner(projector.apply(x), z) == pytest.approx(W.inner(x, projector.apply_adjoint(z)), abs=1e-12)


def test_stable_projector_needs_biorthonormal_pair():
    pair = BiorthogonalPair(np.eye(3)[:, :1], 2.0 * np.eye(3)[:, :1], InnerProductWeight.identity(3))
    with pytest.raises(ValidationError, match='bi-orthonormal'):
        stable_projector(pair)


def test_principal_angles_of_known_planes():
    U = np.eye(3)[:, :2]
    theta = 0.3
    V = np.array([[1.0, 0.0], [0.0, np.cos(theta)], [0.0, np.sin(theta)]])
    np.testing.assert_allclose(principal_angles(U, V), [0.0, theta], atol=1e-12)
    assert subspace_distance(U, V) == pytest.approx(np.sin(theta))
    assert subspace_distance(U, V[:, :1]) == 1.0


def test_leading_eigenvalues_order():
    A = np.diag([-1.0, 2.0, 0.5])
    np.testing.assert_allclose(leading_eigenvalues(A, 2), [2.0, 0.5])


@pytest.mark.parametrize('side', ['right', 'left'])
def test_unstable_eigenspace_recovers_exact_space(weighted_lti, side):
    system = weighted_lti.system
    found = unstable_eigenspace(system, side, k_max=2, dt=0.05, tol=1e-9, seed=1)
    exact = weighted_lti.right if side == 'right' else weighted_lti.left

    assert found.n_unstable == 2
    assert subspace_distance(found.basis, exact, system.weight) < 1e-6
    assert match_eigenvalues(weighted_lti.eigenvalues[:2], found.ritz_values, atol=1e-6)
    assert np.max(found.residuals) < 1e-5


def test_unstable_eigenspace_of_stable_plant(stable_lti):
    found = unstable_eigenspace(stable_lti.system, 'right', k_max=3, dt=0.05, seed=0)
    assert found.n_unstable == 0
    assert found.basis.shape == (6, 0)


def test_unstable_eigenspace_rejects_small_k_max(unstable_lti):
    with pytest.raises(ValidationError, match='more than k_max'):
        unstable_eigenspace(unstable_lti.system, 'right', k_max=1, dt=0.05)


def test_unstable_eigenspace_rejects_bad_side(unstable_lti):
    with pytest.raises(ValidationError):
        unstable_eigenspace(unstable_lti.system, 'middle')
