#!/usr/bin/env python

"""Tests for `balanced_pod_tools.snapshots`."""
import numpy as np
import pytest

from balanced_pod_tools.errors import ProjectorLeakageError, RankError, ValidationError
from balanced_pod_tools.linops import InnerProductWeight, LinearOperator, StateSpaceSystem
from balanced_pod_tools.snapshots import (SnapshotMatrix, adjoint_response, energy_history, impulse_response,
                                          output_projection, pod, sensor_reconstruction, trapezoid_weights)
from balanced_pod_tools.spectral import BiorthogonalPair, StableProjector, biorthonormalize, stable_projector


@pytest.fixture
def decay():
    """``x' = -x`` with a unit input and output."""
    return StateSpaceSystem(LinearOperator.from_matrix(np.array([[-1.0]])), np.ones((1, 1)), np.ones((1, 1)))


def test_trapezoid_weights():
    np.testing.assert_allclose(trapezoid_weights(3, 0.5), [0.25, 0.5, 0.25])
    np.testing.assert_allclose(trapezoid_weights(1, 0.5), [0.5])
    with pytest.raises(ValidationError):
        trapezoid_weights(0, 0.5)


def test_snapshot_matrix_validates_times():
    states = np.ones((2, 3))
    with pytest.raises(ValidationError, match='strictly increasing'):
        SnapshotMatrix(states, [0.0, 1.0, 1.0], np.ones(3), np.zeros(3), None)
    with pytest.raises(ValidationError, match='positive'):
        SnapshotMatrix(states, [0.0, 1.0, 2.0], [1.0, 0.0, 1.0], np.zeros(3), None)


def test_snapshot_matrix_save_load(tmp_path):
    rng = np.random.default_rng(2)
    snaps = SnapshotMatrix(rng.standard_normal((3, 4)), [0.0, 1.0, 0.0, 1.0], [0.5, 0.5, 0.5, 0.5], [0, 0, 1, 1],
                           None, {'kind': 'impulse'})
    snaps.save(tmp_path / 'direct')
    back = SnapshotMatrix.load(tmp_path / 'direct')
    assert back.digest == snaps.digest
    assert back.n_runs == 2
    assert back.metadata['kind'] == 'impulse'


def test_impulse_gramian_of_scalar_decay(decay):
    snaps = impulse_response(decay, None, dt=0.01, n_steps=2000, spacing=10, scheme='exact-expm')
    assert snaps.n_columns == 201
    np.testing.assert_allclose(snaps.states[0, :3], np.exp(-np.array([0.0, 0.1, 0.2])), rtol=1e-12)
    # int_0^inf e^{-2t} dt
    np.testing.assert_allclose(snaps.gramian(), [[0.5]], rtol=1e-2)


def test_adjoint_response_checks_rows(decay):
    with pytest.raises(ValidationError, match='rows'):
        adjoint_response(decay, None, np.ones((2, 1)), dt=0.1, n_steps=10, spacing=5)


def test_projected_runs_stay_stable(unstable_lti):
    system = unstable_lti.system
    projector = stable_projector(biorthonormalize(unstable_lti.right, unstable_lti.left, system.weight))
    direct = impulse_response(system, projector, dt=0.05, n_steps=1000, spacing=50)
    adjoint = adjoint_response(system, projector, system.C.T, dt=0.05, n_steps=1000, spacing=50)

    assert direct.n_runs == system.p
    assert adjoint.n_runs == system.q
    # nothing left along the unstable modes, and the runs decay
    np.testing.assert_allclose(projector.unstable_coefficients(direct.states), 0.0, atol=1e-10)
    assert np.linalg.norm(direct.states[:, -1]) < 1e-3 * np.linalg.norm(direct.states[:, 0])


def test_unprojected_unstable_run_leaks(unstable_lti):
    system = unstable_lti.system
    # a projector along the wrong modes leaves the growing directions in
    wrong = StableProjector(BiorthogonalPair(np.zeros((6, 0)), np.zeros((6, 0)), system.weight))
    with pytest.raises(ProjectorLeakageError):
        impulse_response(system, wrong, dt=0.05, n_steps=20000, spacing=100)


def test_pod_modes_and_energies():
    rng = np.random.default_rng(4)
    W = InnerProductWeight.from_diagonal(rng.uniform(0.5, 2.0, 5))
    data = rng.standard_normal((5, 2)) @ rng.standard_normal((2, 12))
    basis = pod(data, 2, W)

    np.testing.assert_allclose(W.gram(basis.modes, basis.modes), np.eye(2), atol=1e-12)
    assert basis.energies[0] >= basis.energies[1]
    assert basis.captured_fraction == pytest.approx(1.0)
    with pytest.raises(RankError):
        pod(data, 3, W)


def test_output_projection_without_basis():
    C = np.arange(6.0).reshape(2, 3)
    projection = output_projection(C, None)
    assert projection.m == 2
    np.testing.assert_allclose(projection.projected_map, C)
    np.testing.assert_allclose(projection.adjoint_modes(InnerProductWeight.identity(3)), C.T)


def test_output_projection_on_pod_modes():
    rng = np.random.default_rng(8)
    outputs = SnapshotMatrix.from_trajectory(rng.standard_normal((4, 1)) @ rng.standard_normal((1, 6)),
                                             np.arange(6.0))
    basis = pod(outputs, 1)
    projection = output_projection(np.eye(4), basis)
    # the projected map is the orthogonal projector onto the single mode
    P = projection.projected_map
    np.testing.assert_allclose(P @ P, P, atol=1e-12)
    np.testing.assert_allclose(P @ outputs.states, outputs.states, atol=1e-10)


def test_energy_and_sensor_tables():
    rng = np.random.default_rng(9)
    outputs = SnapshotMatrix.from_trajectory(rng.standard_normal((6, 8)), np.arange(8.0))
    basis = pod(outputs, 4)
    history = energy_history(outputs, basis, [2, 4])
    assert len(history) == outputs.n_columns
    reconstruction = sensor_reconstruction(outputs, basis, [1, 3])
    assert len(reconstruction) == outputs.n_columns
    with pytest.raises(RankError):
        energy_history(outputs, basis, [5])
    with pytest.raises(ValidationError):
        sensor_reconstruction(outputs, basis, [6])
