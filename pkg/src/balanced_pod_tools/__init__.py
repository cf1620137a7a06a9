"""Top-level package for balanced-pod-tools."""

__version__ = '0.1.0'

from .balpod import ReducedModel, balance, balanced_truncation_unstable
from .config import PipelineConfig, load_config
from .control import Compensator, closed_loop_simulate, kalman_gain, lqr_gain
from .linops import InnerProductWeight, LinearOperator, StateSpaceSystem
from .snapshots import SnapshotMatrix, adjoint_response, impulse_response, pod
from .spectral import biorthonormalize, stable_projector, unstable_eigenspace
from .steady import newton_gmres
from .testbed import HopfPlant, TestbedSpec, hopf_pde, random_lti

__all__ = ['Compensator', 'HopfPlant', 'InnerProductWeight', 'LinearOperator', 'PipelineConfig', 'ReducedModel',
           'SnapshotMatrix', 'StateSpaceSystem', 'TestbedSpec', 'adjoint_response', 'balance',
           'balanced_truncation_unstable', 'biorthonormalize', 'closed_loop_simulate', 'hopf_pde',
           'impulse_response', 'kalman_gain', 'load_config', 'lqr_gain', 'newton_gmres', 'pod', 'random_lti',
           'stable_projector', 'unstable_eigenspace']
