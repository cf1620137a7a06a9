"""Shared fixtures for the `balanced_pod_tools` tests."""
from pathlib import Path
import sys

import numpy as np
import pytest

# make the package importable without installing it
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from balanced_pod_tools.linops import eig_dense
from balanced_pod_tools.steady import newton_gmres
from balanced_pod_tools.testbed import HopfPlant, TestbedSpec as PlantSpec, random_lti


def match_eigenvalues(expected, computed, atol=1.0e-8):
    """True when every expected eigenvalue has a computed one within ``atol``."""
    computed = np.asarray(computed)
    return all(np.min(np.abs(computed - lam)) <= atol for lam in np.asarray(expected))


@pytest.fixture(scope='session')
def stable_lti():
    """Small stable random plant."""
    return random_lti(6, 0, p=1, q=2, gaps=(0.1, 0.5), seed=3)


@pytest.fixture(scope='session')
def unstable_lti():
    """Small random plant with one unstable complex pair."""
    return random_lti(6, 2, p=1, q=2, gaps=(0.1, 0.5), seed=5)


@pytest.fixture(scope='session')
def hopf_spec():
    return PlantSpec(kind='hopf-pde', grid=32)


@pytest.fixture(scope='session')
def hopf_plant(hopf_spec):
    """Coarse Hopf plant (n = 64)."""
    return HopfPlant(hopf_spec)


@pytest.fixture(scope='session')
def hopf_steady(hopf_plant):
    """Forced steady state of the coarse Hopf plant above onset (unstable)."""
    x, report = newton_gmres(hopf_plant.fixed_point_problem(0.01, 50), np.zeros(hopf_plant.n))
    assert report.converged
    return x


@pytest.fixture(scope='session')
def hopf_linear(hopf_plant, hopf_steady):
    """Dense linearization about the steady state, its eigen-decomposition and the number of unstable modes."""
    system = hopf_plant.linear_system(hopf_steady)
    eig = eig_dense(system.A.matrix)
    return system, eig, int(np.sum(eig.values.real > 0))
