"""
Impulse-response and adjoint-response snapshot ensembles, POD and output
projection.

A :class:`SnapshotMatrix` keeps the raw sampled states together with their
quadrature weights; its :attr:`~SnapshotMatrix.matrix` scales every column by
the square root of its weight so that ``X X^T`` is a quadrature of the Gramian
integral. Weights follow the trapezoid rule over the sampling grid.
"""
from __future__ import annotations
from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd

from .errors import ProjectorLeakageError, RankError, ValidationError
from .io import array_hash, read_matrix, read_metadata, write_matrix, write_metadata
from .linops import InnerProductWeight, StateSpaceSystem, Stepper, as_weight, svd
from .spectral import StableProjector

logger = logging.getLogger(__name__)

# growth factor of a projected run that is treated as leakage of unstable content
LEAKAGE_GROWTH = 1.0e6

# relative singular value below which snapshot data counts as rank deficient
RANK_TOL = 1.0e-12


def trapezoid_weights(count: int, spacing: float) -> np.ndarray:
    """Trapezoid quadrature weights on ``count`` equally spaced samples (a single sample gets ``spacing``)."""
    if count < 1:
        raise ValidationError('at least one sample is required')
    weights = np.full(count, float(spacing))
    if count > 1:
        weights[0] *= 0.5
        weights[-1] *= 0.5
    return weights


@dataclass
class SnapshotMatrix:
    """
    Time-stamped state columns with quadrature weights.

    Columns are ordered by run (input or mode) index, then by time.
    """
    states: np.ndarray
    times: np.ndarray
    weights: np.ndarray
    index: np.ndarray
    weight: InnerProductWeight
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.index = np.asarray(self.index, dtype=int).ravel()
        count = self.states.shape[1]
        if not (self.times.size == self.weights.size == self.index.size == count):
            raise ValidationError('times, weights and index must have one entry per column')
        if np.any(self.weights <= 0):
            raise ValidationError('quadrature weights must be positive')
        for run in np.unique(self.index):
            if np.any(np.diff(self.times[self.index == run]) <= 0):
                raise ValidationError(f'sample times of run {run} are not strictly increasing')
        self.weight = as_weight(self.weight, self.states.shape[0])

    def __repr__(self):
        return f'{self.__class__.__name__} (n={self.n}, columns={self.n_columns}, runs={self.n_runs})'

    @classmethod
    def from_trajectory(cls, states: np.ndarray, times: np.ndarray, weight=None) -> SnapshotMatrix:
        """A single run with unit quadrature weights (trajectory data, not a Gramian factor)."""
        states = np.asarray(states, dtype=float)
        return cls(states, times, np.ones(states.shape[1]), np.zeros(states.shape[1], dtype=int),
                   as_weight(weight, states.shape[0]), {'quadrature': 'unit'})

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def n_columns(self) -> int:
        return self.states.shape[1]

    @property
    def n_runs(self) -> int:
        return np.unique(self.index).size

    @property
    def matrix(self) -> np.ndarray:
        """Quadrature-scaled snapshot matrix ``X`` (columns times sqrt of their weights)."""
        return self.states * np.sqrt(self.weights)

    def gramian(self) -> np.ndarray:
        """Empirical Gramian ``X X^T``."""
        X = self.matrix
        return X @ X.T

    def map(self, C: np.ndarray, output_weight=None) -> SnapshotMatrix:
        """The outputs ``C x`` of every snapshot, keeping times and weights."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        return SnapshotMatrix(C @ self.states, self.times, self.weights, self.index,
                              as_weight(output_weight, C.shape[0]), dict(self.metadata))

    @property
    def digest(self) -> str:
        return array_hash(self.states, self.times, self.weights)

    def save(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        write_matrix(directory / 'states.txt', self.states)
        write_matrix(directory / 'times.txt', self.times)
        write_matrix(directory / 'weights.txt', self.weights)
        write_matrix(directory / 'index.txt', self.index.astype(float))
        write_metadata(directory / 'metadata.json', {**self.metadata, 'hash': self.digest,
                                                     'weight': self.weight.digest()})
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path], weight=None) -> SnapshotMatrix:
        directory = Path(directory)
        states = read_matrix(directory / 'states.txt')
        meta = read_metadata(directory / 'metadata.json')
        meta.pop('hash', None)
        meta.pop('weight', None)
        return cls(states, read_matrix(directory / 'times.txt').ravel(),
                   read_matrix(directory / 'weights.txt').ravel(),
                   read_matrix(directory / 'index.txt').ravel().astype(int),
                   as_weight(weight, states.shape[0]), meta)


def _run_ensemble(stepper: Stepper, initial: np.ndarray, project, dt: float, n_steps: int, spacing: int,
                  project_every_step: bool, kind: str):
    """Step all runs as one block, sampling every ``spacing`` steps."""
    if dt <= 0:
        raise ValidationError(f'time step must be positive, got {dt}')
    if spacing < 1:
        raise ValidationError(f'spacing must be at least 1, got {spacing}')
    if n_steps < 0:
        raise ValidationError(f'n_steps must be nonnegative, got {n_steps}')

    state = initial if project is None else project(initial)
    initial_norms = np.linalg.norm(state, axis=0)
    samples = [state]

    for step in range(1, n_steps + 1):
        state = stepper.step(state)
        if project is not None and project_every_step:
            state = project(state)
        if step % spacing == 0:
            samples.append(state)
            if project is not None:
                growth = np.linalg.norm(state, axis=0) / np.where(initial_norms > 0, initial_norms, np.inf)
                if np.max(growth) > LEAKAGE_GROWTH:
                    raise ProjectorLeakageError(f'{kind} run grew by {np.max(growth):.2e} at t={step * dt:.3f} '
                                                f'with the stable projector active; unstable content is leaking')

    count = len(samples)
    runs = initial.shape[1]
    block = np.stack(samples, axis=2)  # n x runs x count
    states = block.reshape(initial.shape[0], runs * count)
    times = np.tile(np.arange(count) * spacing * dt, runs)
    weights = np.tile(trapezoid_weights(count, spacing * dt), runs)
    index = np.repeat(np.arange(runs), count)
    return states, times, weights, index


def impulse_response(system: StateSpaceSystem, projector: Optional[StableProjector] = None, dt: float = 0.01,
                     n_steps: int = 9950, spacing: int = 50, project_every_step: bool = True,
                     scheme: str = 'crank-nicolson') -> SnapshotMatrix:
    """
    Impulse-response snapshots, one run per input column of ``B``.

    Each run starts from ``x(0) = P_s B e_j`` (``B e_j`` without a projector)
    and is stepped by the linear stepper; with a projector the state is
    projected back onto the stable subspace after every step unless
    ``project_every_step`` is ``False``, in which case only the initial state is
    projected.

    Args:
        system: Linear(ized) plant.
        projector: Stable-subspace projector, or ``None`` for a stable plant.
        dt: Time step.
        n_steps: Number of steps per run; ``n_steps // spacing + 1`` snapshots are kept.
        spacing: Steps between snapshots.
        project_every_step: Project after every step rather than only at ``t=0``.
        scheme: ``'crank-nicolson'`` or ``'exact-expm'``.

    Returns: SnapshotMatrix
    """
    stepper = Stepper(system.A, dt, scheme=scheme)
    project = None if projector is None else projector.apply
    states, times, weights, index = _run_ensemble(stepper, system.B.copy(), project, dt, n_steps, spacing,
                                                  project_every_step, 'impulse')
    meta = {
        'kind': 'impulse', 'dt': dt, 'spacing': spacing, 'n_steps': n_steps, 'scheme': scheme,
        'quadrature': 'trapezoid', 'project_every_step': project_every_step,
        'projector': None if projector is None else projector.digest,
    }
    logger.info('impulse response: %d runs x %d snapshots', system.p, states.shape[1] // max(system.p, 1))
    return SnapshotMatrix(states, times, weights, index, system.weight, meta)


def adjoint_response(system: StateSpaceSystem, projector: Optional[StableProjector], initial_modes: np.ndarray,
                     dt: float = 0.01, n_steps: int = 9950, spacing: int = 50, project_every_step: bool = True,
                     scheme: str = 'crank-nicolson') -> SnapshotMatrix:
    """
    Adjoint-response snapshots: one run of ``z' = A* z`` per column of
    ``initial_modes``, projected with ``P_s*``.

    ``initial_modes`` are normally :meth:`OutputProjection.adjoint_modes`
    (``C* theta``), or ``C*`` itself when the outputs are few.
    """
    modes = np.atleast_2d(np.asarray(initial_modes, dtype=float).T).T
    if modes.shape[0] != system.n:
        raise ValidationError(f'initial modes have {modes.shape[0]} rows, expected {system.n}')

    stepper = Stepper(system.A, dt, scheme=scheme, adjoint=True)
    project = None if projector is None else projector.apply_adjoint
    states, times, weights, index = _run_ensemble(stepper, modes.copy(), project, dt, n_steps, spacing,
                                                  project_every_step, 'adjoint')
    meta = {
        'kind': 'adjoint', 'dt': dt, 'spacing': spacing, 'n_steps': n_steps, 'scheme': scheme,
        'quadrature': 'trapezoid', 'project_every_step': project_every_step,
        'projector': None if projector is None else projector.digest,
        'modes': array_hash(modes),
    }
    logger.info('adjoint response: %d runs x %d snapshots', modes.shape[1], states.shape[1] // max(modes.shape[1], 1))
    return SnapshotMatrix(states, times, weights, index, system.weight, meta)


@dataclass
class PODBasis:
    """``W``-orthonormal POD modes with the full energy spectrum of the data."""
    modes: np.ndarray
    energies: np.ndarray
    weight: InnerProductWeight

    @property
    def m(self) -> int:
        return self.modes.shape[1]

    @property
    def cumulative_fractions(self) -> np.ndarray:
        total = np.sum(self.energies)
        if total == 0:
            return np.zeros_like(self.energies)
        return np.cumsum(self.energies) / total

    @property
    def captured_fraction(self) -> float:
        return float(self.cumulative_fractions[self.m - 1]) if self.m else 0.0

    def energy_report(self) -> pd.DataFrame:
        return pd.DataFrame({
            'mode': np.arange(1, self.energies.size + 1),
            'energy': self.energies,
            'cumulative_fraction': self.cumulative_fractions,
            'retained': np.arange(self.energies.size) < self.m,
        })

    def truncate(self, m: int) -> PODBasis:
        if m > self.m:
            raise RankError(f'cannot keep {m} modes, only {self.m} available', self.m)
        return PODBasis(self.modes[:, :m], self.energies, self.weight)


def pod(X: Union[SnapshotMatrix, np.ndarray], m: int = None, W=None) -> PODBasis:
    """
    POD modes of a snapshot set: leading left singular vectors of the weighted
    snapshot matrix ``F X``, mapped back through ``F^{-1}``.

    Args:
        X: Snapshot ensemble, or a bare matrix whose columns are used as-is.
        m: Number of modes to keep; ``None`` keeps the numerical rank.
        W: Weight for a bare matrix (ignored for a SnapshotMatrix).

    Returns: PODBasis
    """
    if isinstance(X, SnapshotMatrix):
        data, weight = X.matrix, X.weight
    else:
        data = np.atleast_2d(np.asarray(X, dtype=float).T).T
        weight = as_weight(W, data.shape[0])

    U, s, _ = svd(weight.factor(data))
    rank = int(np.sum(s > RANK_TOL * s[0])) if s.size and s[0] > 0 else 0
    if m is None:
        m = rank
    if m < 0 or m > rank:
        raise RankError(f'requested {m} POD modes but the snapshot data has numerical rank {rank}', rank)

    modes = weight.factor_solve(U[:, :m])
    return PODBasis(modes, s ** 2, weight)


@dataclass
class OutputProjection:
    """
    Output map ``C`` restricted to the leading POD modes ``theta`` of the output
    data (``theta`` is ``None`` for no projection).

    ``coefficient_map`` (``theta* C``) is the rank-m model output;
    ``projected_map`` (``theta theta* C``) is the projected full output.
    """
    C: np.ndarray
    theta: Optional[np.ndarray]
    output_weight: InnerProductWeight
    basis: Optional[PODBasis] = None

    @property
    def m(self) -> int:
        return self.C.shape[0] if self.theta is None else self.theta.shape[1]

    @property
    def coefficient_map(self) -> np.ndarray:
        if self.theta is None:
            return self.output_weight.factor(self.C)
        return self.output_weight.gram(self.theta, self.C)

    @property
    def projected_map(self) -> np.ndarray:
        if self.theta is None:
            return self.C.copy()
        return self.theta @ self.coefficient_map

    def adjoint_modes(self, state_weight: InnerProductWeight) -> np.ndarray:
        """Initial conditions of the adjoint runs: the ``W``-adjoint of ``coefficient_map`` applied to the unit vectors."""
        return state_weight.solve(self.coefficient_map.T)

    def coefficients(self, x: np.ndarray) -> np.ndarray:
        return self.coefficient_map @ x

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.projected_map @ x


def output_projection(C: np.ndarray, basis: Optional[PODBasis], output_weight=None) -> OutputProjection:
    """
    Orthogonal projection of the outputs ``y = C x`` onto POD modes of the output data.

    Args:
        C: Output matrix ``q x n``.
        basis: POD of the (projected) impulse-response outputs, ``None`` to keep
            the outputs unprojected.
        output_weight: Weight of the output space (identity by default).

    Returns: OutputProjection
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    W_y = as_weight(output_weight if basis is None or output_weight is not None else basis.weight, C.shape[0])
    if basis is None:
        return OutputProjection(C, None, W_y)
    if basis.modes.shape[0] != C.shape[0]:
        raise ValidationError(f'POD modes live in dimension {basis.modes.shape[0]}, outputs in {C.shape[0]}')
    return OutputProjection(C, basis.modes, W_y, basis)


def energy_history(X: SnapshotMatrix, basis: PODBasis, orders: Iterable[int] = None) -> pd.DataFrame:
    """Energy of every snapshot and the part of it captured by the leading modes of each order."""
    orders = [basis.m] if orders is None else sorted(set(int(m) for m in orders))
    W = X.weight
    coeffs = W.gram(basis.modes, X.states)
    frame = pd.DataFrame({
        'run': X.index,
        'time': X.times,
        'energy': np.einsum('ij,ij->j', X.states, W.apply(X.states)),
    })
    for m in orders:
        if m > basis.m:
            raise RankError(f'order {m} exceeds the {basis.m} available modes', basis.m)
        frame[f'captured_{m}'] = np.sum(coeffs[:m] ** 2, axis=0)
    return frame


def sensor_reconstruction(Y: SnapshotMatrix, basis: PODBasis, rows: Iterable[int]) -> pd.DataFrame:
    """Sensor-point values of output snapshots against their reconstruction from the POD modes."""
    rows = list(rows)
    if any(r < 0 or r >= Y.n for r in rows):
        raise ValidationError(f'sensor rows {rows} out of range for outputs of dimension {Y.n}')
    recon = basis.modes @ Y.weight.gram(basis.modes, Y.states)
    frame = pd.DataFrame({'run': Y.index, 'time': Y.times})
    for row in rows:
        frame[f'sensor_{row}'] = Y.states[row]
        frame[f'reconstructed_{row}'] = recon[row]
    return frame
