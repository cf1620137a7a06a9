"""
Unstable eigenspaces by time-stepped subspace iteration, bi-orthonormal pairs
and the oblique projector onto the stable subspace.
"""
from __future__ import annotations
from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import List, Union

import numpy as np
import scipy.linalg as la

from .errors import ConvergenceError, SingularPairingError, ValidationError
from .io import array_hash, write_matrix, write_metadata
from .linops import (InnerProductWeight, LinearOperator, StateSpaceSystem, Stepper, as_weight,
                     weighted_orthonormalize)

logger = logging.getLogger(__name__)

SIDES = ('right', 'left')


@dataclass
class BiorthogonalPair:
    """Right basis ``phi`` and left basis ``psi`` scaled so that ``psi^T W phi = I``."""
    phi: np.ndarray
    psi: np.ndarray
    weight: InnerProductWeight

    def __post_init__(self):
        if self.phi.shape != self.psi.shape:
            raise ValidationError(f'right and left bases differ in shape: {self.phi.shape} vs {self.psi.shape}')

    @classmethod
    def empty(cls, weight: InnerProductWeight) -> BiorthogonalPair:
        return cls(np.zeros((weight.dim, 0)), np.zeros((weight.dim, 0)), weight)

    @property
    def k(self) -> int:
        return self.phi.shape[1]

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    def pairing(self) -> np.ndarray:
        return self.weight.gram(self.psi, self.phi)

    def pairing_error(self) -> float:
        if self.k == 0:
            return 0.0
        return float(np.linalg.norm(self.pairing() - np.eye(self.k)))


class StableProjector(object):
    """
    ``P_s x = x - phi (psi^T W x)`` and its ``W``-adjoint ``P_s* z = z - psi (phi^T W z)``,
    applied without forming an ``n x n`` matrix.
    """

    def __init__(self, pair: BiorthogonalPair):
        self.pair = pair

    def __repr__(self):
        return f'{self.__class__.__name__} (n={self.pair.n}, n_u={self.pair.k})'

    @property
    def n_unstable(self) -> int:
        return self.pair.k

    def unstable_coefficients(self, x: np.ndarray) -> np.ndarray:
        """``psi^T W x``: coordinates of ``x`` along the unstable modes."""
        return self.pair.weight.gram(self.pair.psi, x)

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.pair.k == 0:
            return np.array(x, dtype=float, copy=True)
        return x - self.pair.phi @ self.unstable_coefficients(x)

    def apply_adjoint(self, z: np.ndarray) -> np.ndarray:
        if self.pair.k == 0:
            return np.array(z, dtype=float, copy=True)
        return z - self.pair.psi @ self.pair.weight.gram(self.pair.phi, z)

    def to_dense(self) -> np.ndarray:
        return self.apply(np.eye(self.pair.n))

    @property
    def digest(self) -> str:
        return array_hash(self.pair.phi, self.pair.psi)


def stable_projector(pair: BiorthogonalPair) -> StableProjector:
    """Projector onto the stable subspace along the span of ``pair.phi``."""
    err = pair.pairing_error()
    if err > 1.0e-8:
        raise ValidationError(f'pair is not bi-orthonormal (|psi* phi - I| = {err:.2e})')
    return StableProjector(pair)


def biorthonormalize(phi: np.ndarray, psi: np.ndarray, W=None) -> BiorthogonalPair:
    """
    Scale a right/left basis pair so that ``psi^T W phi = I``.

    ``phi`` is made ``W``-orthonormal and all remaining scaling goes into ``psi``;
    column spans are unchanged.

    Args:
        phi: Right basis, ``n x k``.
        psi: Left basis, ``n x k``.
        W: State weight (``None`` for identity).

    Returns: BiorthogonalPair
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float).T).T
    psi = np.atleast_2d(np.asarray(psi, dtype=float).T).T
    if phi.shape != psi.shape:
        raise ValidationError(f'right and left bases differ in shape: {phi.shape} vs {psi.shape}')
    weight = as_weight(W, phi.shape[0])
    if phi.shape[1] == 0:
        return BiorthogonalPair.empty(weight)

    phi = weighted_orthonormalize(phi, weight)
    cross = weight.gram(psi, phi)
    sv = la.svdvals(cross)
    if sv[-1] <= 1.0e-12 * max(sv[0], 1.0e-300):
        raise SingularPairingError(f'cross-Gramian psi^T W phi is singular (smallest singular value {sv[-1]:.2e}); '
                                   f'left and right spaces are (nearly) W-orthogonal or k is wrong')

    psi = la.solve(cross, psi.T).T
    return BiorthogonalPair(phi, psi, weight)


def principal_angles(U: np.ndarray, V: np.ndarray, W=None) -> np.ndarray:
    """Principal angles (ascending, radians) between ``span(U)`` and ``span(V)`` in the ``W`` geometry."""
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    if U.shape[1] > V.shape[1]:
        U, V = V, U
    weight = as_weight(W, U.shape[0])
    if U.shape[1] == 0:
        return np.zeros(0)

    Qu = weighted_orthonormalize(U, weight)
    Qv = weighted_orthonormalize(V, weight)
    cosines = np.clip(la.svdvals(weight.gram(Qv, Qu)), 0.0, 1.0)
    residual = Qu - Qv @ weight.gram(Qv, Qu)
    sines = np.clip(np.sort(la.svdvals(weight.factor(residual))), 0.0, 1.0)

    # arcsin resolves small angles, arccos the large ones
    return np.where(cosines > np.sqrt(0.5), np.arcsin(sines), np.arccos(cosines))


def subspace_distance(U: np.ndarray, V: np.ndarray, W=None) -> float:
    """Sine of the largest principal angle; 1 when the dimensions differ."""
    if U.shape[1] != V.shape[1]:
        return 1.0
    if U.shape[1] == 0:
        return 0.0
    return float(np.sin(np.max(principal_angles(U, V, W))))


def leading_eigenvalues(A: Union[np.ndarray, LinearOperator], count: int = None) -> np.ndarray:
    """Dense eigenvalues sorted by decreasing real part (positive imaginary part first in a pair)."""
    if isinstance(A, LinearOperator):
        A = A.to_dense()
    vals = la.eigvals(np.asarray(A, dtype=float))
    order = np.lexsort((-vals.imag, -vals.real))
    vals = vals[order]
    return vals if count is None else vals[:count]


@dataclass
class UnstableEigenspace:
    """Outcome of :func:`unstable_eigenspace`."""
    basis: np.ndarray
    ritz_values: np.ndarray
    residuals: np.ndarray
    side: str
    cycles: int
    elapsed: float
    distances: List[float] = field(default_factory=list)

    @property
    def n_unstable(self) -> int:
        return self.basis.shape[1]

    def to_metadata(self) -> dict:
        return {
            'side': self.side,
            'n_unstable': self.n_unstable,
            'ritz_values': self.ritz_values,
            'residuals': self.residuals,
            'cycles': self.cycles,
            'elapsed': self.elapsed,
            'final_distance': self.distances[-1] if self.distances else None,
            'basis_hash': array_hash(self.basis),
        }

    def save(self, directory: Union[str, Path], name: str = None) -> Path:
        directory = Path(directory)
        name = name or f'{self.side}_unstable'
        write_matrix(directory / f'{name}.txt', self.basis)
        write_metadata(directory / f'{name}.json', self.to_metadata())
        return directory / f'{name}.txt'


def _rayleigh_ritz(A: LinearOperator, Q: np.ndarray, side: str):
    """Ordered real Schur form of the projected operator, unstable block leading."""
    AQ = A.apply(Q) if side == 'right' else A.apply_adjoint(Q)
    H = A.weight.gram(Q, AQ)
    T, Z, sdim = la.schur(H, output='real', sort='rhp')
    return T, Z, int(sdim), AQ


def unstable_eigenspace(system: StateSpaceSystem, side: str = 'right', k_max: int = 10, dt: float = 0.01,
                        settle_time: float = None, tol: float = 1.0e-8, cycle_time: float = 1.0,
                        max_cycles: int = 2000, seed: int = 0) -> UnstableEigenspace:
    """
    Basis of the unstable right (or left) eigenspace of the linear(ized) plant.

    A seeded random block is propagated by the Crank-Nicolson stepper (the
    adjoint stepper for ``side='left'``) for ``cycle_time`` per cycle and then
    ``W``-orthonormalized. Rayleigh-Ritz on the block counts the Ritz values with
    positive real part and extracts their invariant subspace through an ordered
    real Schur form. Iteration stops once that subspace moves by less than
    ``tol`` (``W`` principal-angle sine) between cycles and at least
    ``settle_time`` has elapsed.

    Args:
        system: Plant; only its operator ``A`` and weight are used.
        side: ``'right'`` or ``'left'``.
        k_max: Largest admissible number of unstable eigenvalues.
        dt: Stepper time step.
        settle_time: Minimum integration time. ``None`` adapts it to
            ``20 / min Re(lambda_u)`` from the current Ritz values.
        tol: Convergence threshold on the subspace distance.
        cycle_time: Integration time between orthonormalizations.
        max_cycles: Iteration cap.
        seed: Seed of the initial random block.

    Returns: UnstableEigenspace
    """
    if side not in SIDES:
        raise ValidationError(f'side must be one of {SIDES}, got "{side}"')
    if k_max < 1:
        raise ValidationError('k_max must be at least 1')

    A = system.A
    n = A.n
    weight = A.weight
    block = min(k_max + 2, n)
    steps_per_cycle = max(1, int(round(cycle_time / dt)))

    stepper = Stepper(A, dt, adjoint=(side == 'left'))
    rng = np.random.default_rng([seed, SIDES.index(side)])
    Q = weighted_orthonormalize(rng.standard_normal((n, block)), weight)

    previous = None
    distances = []
    elapsed = 0.0

    for cycle in range(1, max_cycles + 1):
        Q = stepper.advance(Q, steps_per_cycle)
        elapsed += steps_per_cycle * dt
        Q = weighted_orthonormalize(Q, weight)

        T, Z, n_u, AQ = _rayleigh_ritz(A, Q, side)
        if n_u > k_max:
            raise ValidationError(f'found {n_u} growing directions, more than k_max={k_max}')

        current = Q @ Z[:, :n_u]
        distance = 1.0 if previous is None else subspace_distance(previous, current, weight)
        distances.append(distance)
        previous = current

        ritz = la.eigvals(T[:n_u, :n_u]) if n_u else np.zeros(0, dtype=complex)
        required = settle_time
        if required is None:
            required = 20.0 / np.min(ritz.real) if n_u else 3.0 * cycle_time

        logger.debug('%s eigenspace cycle %d: n_u=%d, distance %.3e, t=%.2f', side, cycle, n_u, distance, elapsed)

        if distance < tol and elapsed >= required:
            residual_block = AQ @ Z[:, :n_u] - current @ T[:n_u, :n_u]
            residuals = np.array([weight.norm(col) for col in residual_block.T])
            order = np.lexsort((-ritz.imag, -ritz.real))
            logger.info('%s unstable eigenspace converged: n_u=%d after %d cycles', side, n_u, cycle)
            return UnstableEigenspace(current, ritz[order], residuals, side, cycle, elapsed, distances)

    report = {'side': side, 'cycles': max_cycles, 'distances': distances[-5:]}
    raise ConvergenceError(f'{side} unstable eigenspace did not converge in {max_cycles} cycles '
                           f'(last distance {distances[-1]:.3e})', report)
