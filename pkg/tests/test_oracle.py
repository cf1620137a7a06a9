#!/usr/bin/env python

"""Tests for `balanced_pod_tools.oracle`."""
import numpy as np
import pytest
import scipy.linalg as la

from balanced_pod_tools.errors import HyperbolicityError, ValidationError
from balanced_pod_tools.linops import solve_lyapunov
from balanced_pod_tools.oracle import (comparison_table, decouple, exact_bt_stable, exact_bt_unstable,
                                       freq_domain_gramians, projected_gramian_equivalence_check, zhou_gramians)


@pytest.fixture(scope='module')
def plant(unstable_lti):
    system = unstable_lti.system
    return system.A.matrix, system.B, system.C


def test_decouple_reconstructs_operator(plant):
    A, B, C = plant
    dec = decouple(A, B, C)
    assert dec.n_u == 2
    np.testing.assert_allclose(dec.reconstruct(), A, atol=1e-10)
    np.testing.assert_allclose(dec.inverse_transform @ dec.transform, np.eye(6), atol=1e-10)
    assert np.all(la.eigvals(dec.A_u).real > 0)
    assert np.all(la.eigvals(dec.A_s).real < 0)


def test_decouple_rejects_imaginary_axis_eigenvalue():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(HyperbolicityError):
        decouple(A, np.ones(2), np.ones(2))


def test_dense_paths_are_capped():
    with pytest.raises(ValidationError, match='capped'):
        decouple(-np.eye(401), np.ones(401), np.ones(401))


def test_balanced_realization_has_diagonal_gramians(stable_lti):
    system = stable_lti.system
    bal = exact_bt_stable(system.A.matrix, system.B, system.C)
    Wc = solve_lyapunov(bal.A, bal.B @ bal.B.T)
    Wo = solve_lyapunov(bal.A.T, bal.C.T @ bal.C)
    np.testing.assert_allclose(Wc, np.diag(bal.hsvs[:bal.r]), atol=1e-8 * bal.hsvs[0])
    np.testing.assert_allclose(Wo, np.diag(bal.hsvs[:bal.r]), atol=1e-8 * bal.hsvs[0])


def test_stable_input_gives_empty_unstable_block(stable_lti):
    system = stable_lti.system
    bal = exact_bt_unstable(system.A.matrix, system.B, system.C)
    assert bal.r_u == 0
    assert bal.hsvs_u.size == 0


def test_unstable_balancing_keeps_unstable_block(plant):
    A, B, C = plant
    bal = exact_bt_unstable(A, B, C, r_s=2)
    assert (bal.r_u, bal.r_s) == (2, 2)
    np.testing.assert_allclose(bal.psi.T @ bal.phi, np.eye(4), atol=1e-8)
    assert np.all(la.eigvals(bal.A[:2, :2]).real > 0)


@pytest.mark.slow
def test_decoupled_gramians_match_frequency_domain(plant):
    A, B, C = plant
    zhou_c, zhou_o = zhou_gramians(A, B, C)
    freq_c, freq_o = freq_domain_gramians(A, B, C)
    np.testing.assert_allclose(freq_c, zhou_c, rtol=1e-5, atol=1e-7 * np.linalg.norm(zhou_c))
    np.testing.assert_allclose(freq_o, zhou_o, rtol=1e-5, atol=1e-7 * np.linalg.norm(zhou_o))


def test_projected_gramians_equal_stable_parts(plant):
    A, B, C = plant
    exact = projected_gramian_equivalence_check(A, B, C)
    assert exact.n_u == 2
    assert exact.max_relative < 1e-8
    perturbed = projected_gramian_equivalence_check(A, B, C, psi_perturbation=1e-2, seed=3)
    assert perturbed.max_relative > exact.max_relative


def test_comparison_table_expands_arrays():
    table = comparison_table({'hsv': [1.0, 0.5], 'abscissa': 0.2}, {'hsv': [1.0, 0.4], 'abscissa': 0.2})
    assert list(table['quantity']) == ['hsv_1', 'hsv_2', 'abscissa']
    np.testing.assert_allclose(table['relative_error'], [0.0, 0.25, 0.0])
