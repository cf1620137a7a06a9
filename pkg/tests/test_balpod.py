#!/usr/bin/env python

"""Tests for `balanced_pod_tools.balpod`."""
import numpy as np
import pytest

from balanced_pod_tools.balpod import (ReducedModel, assemble_rom, balance, balanced_truncation_unstable,
                                       empirical_gramians, hsv_table, project_initial_state, rom_impulse_compare)
from balanced_pod_tools.errors import RankError, StabilityError, ValidationError
from balanced_pod_tools.oracle import exact_bt_stable, exact_bt_unstable
from balanced_pod_tools.snapshots import SnapshotMatrix, adjoint_response, impulse_response, output_projection
from balanced_pod_tools.spectral import biorthonormalize

# snapshot settings fine enough for percent-level agreement with exact balancing
dt = 0.01
n_steps = 4000
spacing = 1


@pytest.fixture(scope='module')
def stable_snapshots(stable_lti):
    system = stable_lti.system
    direct = impulse_response(system, None, dt=dt, n_steps=n_steps, spacing=spacing)
    adjoint = adjoint_response(system, None, system.C.T, dt=dt, n_steps=n_steps, spacing=spacing)
    return direct, adjoint


def test_balancing_modes_are_biorthonormal(stable_snapshots):
    direct, adjoint = stable_snapshots
    bal = balance(direct, adjoint, 3)
    assert bal.r == 3
    np.testing.assert_allclose(bal.psi.T @ bal.phi, np.eye(3), atol=1e-8)
    assert np.all(np.diff(bal.hsvs) <= 0)


def test_balanced_pod_matches_exact_hsvs(stable_lti, stable_snapshots):
    direct, adjoint = stable_snapshots
    bal = balance(direct, adjoint)
    system = stable_lti.system
    exact = exact_bt_stable(system.A.matrix, system.B, system.C)
    np.testing.assert_allclose(bal.hsvs[:2], exact.hsvs[:2], rtol=1e-2)


def test_balance_rejects_excess_order(stable_snapshots):
    direct, adjoint = stable_snapshots
    with pytest.raises(RankError) as err:
        balance(direct, adjoint, 7)
    assert err.value.attainable <= 6


def test_balance_keeps_tied_pairs():
    # Z^T X = diag(2, 1, 1): asking for two modes splits the tied pair
    X = SnapshotMatrix.from_trajectory(np.diag([2.0, 1.0, 1.0]), np.arange(3.0))
    Z = SnapshotMatrix.from_trajectory(np.eye(3), np.arange(3.0))
    bal = balance(X, Z, 2)
    assert bal.r == 3
    np.testing.assert_allclose(bal.hsvs, [2.0, 1.0, 1.0])


def test_balance_checks_dimensions():
    X = SnapshotMatrix.from_trajectory(np.eye(3), np.arange(3.0))
    Z = SnapshotMatrix.from_trajectory(np.eye(2), np.arange(2.0))
    with pytest.raises(ValidationError):
        balance(X, Z)


def test_reduced_model_blocks():
    model = ReducedModel.from_blocks([[0.5]], np.diag([-1.0, -2.0]), [1.0], [1.0, 0.5])
    assert (model.n_u, model.r, model.order, model.p) == (1, 2, 3, 1)
    np.testing.assert_allclose(model.A, np.diag([0.5, -1.0, -2.0]))
    np.testing.assert_allclose(model.C, np.eye(3))

    small = model.truncate(1)
    assert small.r == 1 and small.n_u == 1
    assert small.provenance['truncated_from'] == 2
    with pytest.raises(RankError):
        model.truncate(3)


def test_reduced_model_save_load(tmp_path):
    model = ReducedModel.from_blocks([[0.5]], np.diag([-1.0, -2.0]), [1.0], [1.0, 0.5], hsvs=[0.3, 0.1])
    model.save(tmp_path / 'model')
    back = ReducedModel.load(tmp_path / 'model')
    np.testing.assert_array_equal(back.A, model.A)
    np.testing.assert_array_equal(back.B, model.B)
    np.testing.assert_array_equal(back.hsvs, model.hsvs)


def test_empirical_gramians_need_stable_block():
    model = ReducedModel.from_blocks([[0.5]], np.diag([0.1, -2.0]), [1.0], [1.0, 0.5])
    with pytest.raises(StabilityError):
        empirical_gramians(model)


def test_project_initial_state_checks_dimension():
    model = ReducedModel.from_blocks([[0.5]], [[-1.0]], [1.0], [1.0])
    with pytest.raises(ValidationError):
        project_initial_state(np.ones(2), model)


@pytest.fixture(scope='module')
def unstable_result(unstable_lti):
    system = unstable_lti.system
    pair = biorthonormalize(unstable_lti.right, unstable_lti.left, system.weight)
    return balanced_truncation_unstable(system, 4, None, dt, n_steps, spacing, pair_u=pair)


@pytest.mark.slow
def test_unstable_balanced_pod_matches_exact_stable_part(unstable_lti, unstable_result):
    system = unstable_lti.system
    exact = exact_bt_unstable(system.A.matrix, system.B, system.C)
    np.testing.assert_allclose(unstable_result.balancing.hsvs[:2], exact.hsvs_s[:2], rtol=1e-2)

    model = unstable_result.model
    assert model.n_u == 2
    exact_u = np.linalg.eigvals(exact.decoupled.A_u)
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(model.A_u).real), np.sort(exact_u.real), atol=1e-8)
    assert model.provenance['coupling_su'] < 1e-8


@pytest.mark.slow
def test_reduced_gramians_are_nearly_balanced(unstable_result):
    model = unstable_result.model
    wc, wo = empirical_gramians(model)
    np.testing.assert_allclose(wc[:2], model.hsvs[:2], rtol=5e-2)
    np.testing.assert_allclose(wo[:2], model.hsvs[:2], rtol=5e-2)
    table = hsv_table(unstable_result.balancing, model)
    assert {'hsv', 'wc_diag', 'wo_diag'} <= set(table.columns)


@pytest.mark.slow
def test_impulse_comparison_reports_small_error(unstable_lti, unstable_result):
    system = unstable_lti.system
    comparison = rom_impulse_compare(system, unstable_result.model, unstable_result.projector,
                                     unstable_result.projection, dt=dt, horizon=20.0, record_every=10)
    assert len(comparison.report) == system.q
    assert comparison.report['relative_l2_error'].max() < 0.1


def test_project_initial_state_of_unstable_mode(unstable_lti, unstable_result):
    model = unstable_result.model
    a0 = project_initial_state(model.phi_u[:, 0], model)
    np.testing.assert_allclose(a0[:model.n_u], [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(a0[model.n_u:], 0.0, atol=1e-10)


def test_assemble_rom_checks_shapes(unstable_lti, unstable_result):
    system = unstable_lti.system
    pair = biorthonormalize(unstable_lti.right, unstable_lti.left)
    with pytest.raises(ValidationError):
        assemble_rom(system, pair, np.ones((5, 2)), np.ones((5, 2)), output_projection(system.C, None))


@pytest.fixture(scope='module')
def hopf_results(hopf_linear):
    """Balanced POD of the Hopf linearization with four and twenty output modes."""
    system, eig, k = hopf_linear
    W = system.weight
    pair = biorthonormalize(eig.right[:, :k], W.solve(eig.left[:, :k]), W)
    return {m: balanced_truncation_unstable(system, None, m, dt, 4000, 10, pair_u=pair) for m in (4, 20)}


@pytest.mark.slow
def test_hsvs_settle_as_output_modes_grow(hopf_results):
    coarse = hopf_results[4].balancing.hsvs
    fine = hopf_results[20].balancing.hsvs
    np.testing.assert_allclose(coarse[:4], fine[:4], rtol=5e-2)


@pytest.mark.slow
def test_impulse_error_falls_with_order(hopf_linear, hopf_results):
    system = hopf_linear[0]
    result = hopf_results[20]
    hsvs = result.balancing.hsvs
    orders = [r for r in (4, 10, 20) if r <= result.model.r and hsvs[r - 1] > 1e-6 * hsvs[0]]
    assert len(orders) >= 2

    errors = []
    for r in orders:
        report = rom_impulse_compare(system, result.model.truncate(r), result.projector, result.projection, dt=dt,
                                     horizon=20.0, record_every=10).report
        errors.append(report.loc[report['output'] == 0, 'relative_l2_error'].iloc[0])
    assert all(later <= earlier for earlier, later in zip(errors, errors[1:]))
