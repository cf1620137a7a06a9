"""
Approximate balancing from snapshot ensembles and the block-diagonal
reduced-order model of an unstable plant.

The reduced state is ``a = (a_u, a_s)``: coefficients along the unstable
eigenvectors ``phi_u`` and along the balancing modes ``phi_s``; the left bases
``psi_u``, ``psi_s`` project onto them.
"""
from __future__ import annotations
from dataclasses import dataclass, field, replace
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
import scipy.linalg as la
from scipy.integrate import trapezoid

from .errors import RankError, StabilityError, ValidationError
from .io import read_matrix, read_metadata, write_matrix, write_metadata
from .linops import (InnerProductWeight, StateSpaceSystem, Stepper, LinearOperator, as_weight,
                     finite_horizon_gramian, solve_lyapunov, svd)
from .snapshots import (OutputProjection, SnapshotMatrix, adjoint_response, impulse_response, output_projection,
                        pod, RANK_TOL)
from .spectral import (BiorthogonalPair, StableProjector, UnstableEigenspace, biorthonormalize,
                       stable_projector, unstable_eigenspace)

logger = logging.getLogger(__name__)

# relative size of Hankel singular values treated as one tied pair
TIE_TOL = 1.0e-6

# relative size of cross-coupling blocks tolerated before a warning
COUPLING_TOL = 1.0e-6


@dataclass
class Balancing:
    """Balancing and adjoint modes from the SVD of ``Z^T W X``."""
    phi: np.ndarray
    psi: np.ndarray
    hsvs: np.ndarray
    rank: int

    @property
    def r(self) -> int:
        return self.phi.shape[1]

    @property
    def leading(self) -> np.ndarray:
        return self.hsvs[:self.r]


def _square(block) -> np.ndarray:
    block = np.asarray(block, dtype=float)
    if block.ndim == 2:
        return block
    k = int(round(np.sqrt(block.size)))
    return block.reshape(k, k)


def _columns(block, cols: int) -> np.ndarray:
    block = np.asarray(block, dtype=float)
    return block if block.ndim == 2 else block.reshape(-1, cols)


def _bump_for_ties(s: np.ndarray, r: int, rank: int, tie_tol: float) -> int:
    while 0 < r < rank and s[r] >= (1.0 - tie_tol) * s[r - 1]:
        r += 1
    return r


def balance(X: SnapshotMatrix, Z: SnapshotMatrix, r: int = None, tie_tol: float = TIE_TOL) -> Balancing:
    """
    Balancing transformation from direct and adjoint snapshots.

    With ``Z^T W X = U S V^T``, returns ``phi = X V_r S_r^{-1/2}`` and
    ``psi = Z U_r S_r^{-1/2}`` so ``psi^T W phi = I``; ``S`` holds the
    (approximate) Hankel singular values. ``r`` is bumped past tied pairs.

    Args:
        X: Direct (impulse-response) snapshots.
        Z: Adjoint snapshots.
        r: Model order; ``None`` keeps the numerical rank.
        tie_tol: Relative gap below which ``s_r`` and ``s_{r+1}`` are kept together.

    Returns: Balancing
    """
    if X.n != Z.n:
        raise ValidationError(f'direct and adjoint snapshots live in dimensions {X.n} and {Z.n}')
    if X.weight.digest() != Z.weight.digest():
        raise ValidationError('direct and adjoint snapshots use different state weights')

    Xm, Zm = X.matrix, Z.matrix
    U, s, V = svd(X.weight.gram(Zm, Xm))
    rank = int(np.sum(s > RANK_TOL * s[0])) if s.size and s[0] > 0 else 0

    if r is None:
        r = rank
    if r < 0 or r > rank:
        raise RankError(f'requested order {r} but Z^T W X has numerical rank {rank}', rank)

    bumped = _bump_for_ties(s, r, rank, tie_tol)
    if bumped != r:
        logger.info('model order raised from %d to %d to keep a tied singular value pair together', r, bumped)
        r = bumped

    scale = 1.0 / np.sqrt(s[:r])
    phi = Xm @ (V[:, :r] * scale)
    psi = Zm @ (U[:, :r] * scale)
    return Balancing(phi, psi, s, rank)


@dataclass
class ReducedModel:
    """
    Block-diagonal reduced-order model.

    ``C_u``/``C_s`` map the reduced state to the (projected) full output;
    ``C_hat_s`` maps ``a_s`` to the output POD coefficients, with ``a_u`` itself
    serving as the unstable-block output.
    """
    A_u: np.ndarray
    A_s: np.ndarray
    B_u: np.ndarray
    B_s: np.ndarray
    C_u: np.ndarray
    C_s: np.ndarray
    C_hat_s: np.ndarray
    hsvs: np.ndarray = None
    phi_u: np.ndarray = None
    psi_u: np.ndarray = None
    phi_s: np.ndarray = None
    psi_s: np.ndarray = None
    weight: InnerProductWeight = None
    provenance: dict = field(default_factory=dict)

    def __repr__(self):
        return f'{self.__class__.__name__} (n_u={self.n_u}, r={self.r}, p={self.p})'

    @classmethod
    def from_blocks(cls, A_u, A_s, B_u, B_s, C_u=None, C_s=None, C_hat_s=None, hsvs=None) -> ReducedModel:
        """Model from explicit blocks (no mode bases); outputs default to the reduced state."""
        A_u, A_s = _square(A_u), _square(A_s)
        n_u, r = A_u.shape[0], A_s.shape[0]
        p = np.size(B_s) // r if r else np.size(B_u) // max(n_u, 1)
        B_u = np.asarray(B_u, dtype=float).reshape(n_u, p)
        B_s = np.asarray(B_s, dtype=float).reshape(r, p)
        if C_u is None and C_s is None:
            C_u = np.vstack([np.eye(n_u), np.zeros((r, n_u))])
            C_s = np.vstack([np.zeros((n_u, r)), np.eye(r)])
        C_u = _columns(C_u, n_u)
        C_s = _columns(C_s, r)
        C_hat_s = np.eye(r) if C_hat_s is None else _columns(C_hat_s, r)
        return cls(A_u, A_s, B_u, B_s, C_u, C_s, C_hat_s, None if hsvs is None else np.asarray(hsvs, dtype=float))

    @property
    def n_u(self) -> int:
        return self.A_u.shape[0]

    @property
    def r(self) -> int:
        return self.A_s.shape[0]

    @property
    def order(self) -> int:
        return self.n_u + self.r

    @property
    def p(self) -> int:
        return self.B_s.shape[1] if self.B_s.size else self.B_u.shape[1]

    @property
    def A(self) -> np.ndarray:
        return la.block_diag(self.A_u, self.A_s)

    @property
    def B(self) -> np.ndarray:
        return np.vstack([self.B_u, self.B_s])

    @property
    def C(self) -> np.ndarray:
        """Full-output map ``[C_u C_s]``."""
        return np.hstack([self.C_u, self.C_s])

    @property
    def C_hat(self) -> np.ndarray:
        """Coefficient-output map ``blockdiag(I, C_hat_s)``."""
        return la.block_diag(np.eye(self.n_u), self.C_hat_s)

    @property
    def phi(self) -> Optional[np.ndarray]:
        if self.phi_s is None:
            return None
        return np.hstack([self.phi_u, self.phi_s])

    @property
    def psi(self) -> Optional[np.ndarray]:
        if self.psi_s is None:
            return None
        return np.hstack([self.psi_u, self.psi_s])

    def lift(self, a: np.ndarray) -> np.ndarray:
        """State ``phi a`` represented by reduced coordinates ``a``."""
        if self.phi_s is None:
            raise ValidationError('model carries no mode bases')
        return self.phi @ a

    def truncate(self, r: int) -> ReducedModel:
        """Keep the leading ``r`` balanced modes (the unstable block is never truncated)."""
        if r > self.r or r < 0:
            raise RankError(f'cannot truncate a {self.r}-mode stable block to {r}', self.r)
        return replace(
            self,
            A_s=self.A_s[:r, :r], B_s=self.B_s[:r], C_s=self.C_s[:, :r], C_hat_s=self.C_hat_s[:, :r],
            phi_s=None if self.phi_s is None else self.phi_s[:, :r],
            psi_s=None if self.psi_s is None else self.psi_s[:, :r],
            provenance={**self.provenance, 'truncated_from': self.r},
        )

    def save(self, directory: Union[str, Path]) -> Path:
        """Write every block as a matrix file plus ``metadata.json``."""
        directory = Path(directory)
        blocks = {
            'A_u': self.A_u, 'A_s': self.A_s, 'B_u': self.B_u, 'B_s': self.B_s,
            'C_u': self.C_u, 'C_s': self.C_s, 'C_hat_s': self.C_hat_s,
            'phi_u': self.phi_u, 'psi_u': self.psi_u, 'phi_s': self.phi_s, 'psi_s': self.psi_s,
        }
        stored = []
        for name, block in blocks.items():
            if block is not None:
                write_matrix(directory / f'{name}.txt', block)
                stored.append(name)
        write_metadata(directory / 'metadata.json', {
            'n_u': self.n_u, 'r': self.r, 'p': self.p,
            'hsvs': self.hsvs, 'blocks': stored, 'provenance': self.provenance,
            'weight': None if self.weight is None else self.weight.digest(),
        })
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path], weight: InnerProductWeight = None) -> ReducedModel:
        directory = Path(directory)
        meta = read_metadata(directory / 'metadata.json')
        # matrix headers carry the shapes, empty blocks included
        blocks = {name: read_matrix(directory / f'{name}.txt') for name in meta['blocks']}
        hsvs = None if meta['hsvs'] is None else np.asarray(meta['hsvs'], dtype=float)
        return cls(hsvs=hsvs, weight=weight, provenance=meta['provenance'], **blocks)


def assemble_rom(system: StateSpaceSystem, pair_u: BiorthogonalPair, phi_s: np.ndarray, psi_s: np.ndarray,
                 projection: OutputProjection, hsvs: np.ndarray = None, provenance: dict = None) -> ReducedModel:
    """
    Petrov-Galerkin reduced model on ``[phi_u phi_s]`` tested with ``[psi_u psi_s]``.

    The cross-coupling blocks ``psi_s* A phi_u`` and ``psi_u* A phi_s`` are
    measured, reported (a warning above ``1e-6 |A|``) and stored in the
    provenance; the model keeps them zeroed.
    """
    W = system.weight
    if phi_s.shape != psi_s.shape or phi_s.shape[0] != system.n:
        raise ValidationError(f'balancing bases have shapes {phi_s.shape} and {psi_s.shape}, '
                              f'expected n={system.n} rows')
    if pair_u.n != system.n:
        raise ValidationError(f'unstable pair has {pair_u.n} rows, expected {system.n}')

    A_phi_u = system.A.apply(pair_u.phi)
    A_phi_s = system.A.apply(phi_s)

    A_u = W.gram(pair_u.psi, A_phi_u)
    A_s = W.gram(psi_s, A_phi_s)

    scale = max(system.A.norm_estimate(), np.finfo(float).tiny)
    coupling_su = float(np.linalg.norm(W.gram(psi_s, A_phi_u))) / scale if pair_u.k else 0.0
    coupling_us = float(np.linalg.norm(W.gram(pair_u.psi, A_phi_s))) / scale if pair_u.k else 0.0
    if max(coupling_su, coupling_us) > COUPLING_TOL:
        logger.warning('cross-coupling |psi_s* A phi_u|/|A| = %.2e, |psi_u* A phi_s|/|A| = %.2e exceed %.0e; '
                       'the unstable eigenspaces may not be converged', coupling_su, coupling_us, COUPLING_TOL)

    model = ReducedModel(
        A_u=A_u,
        A_s=A_s,
        B_u=W.gram(pair_u.psi, system.B),
        B_s=W.gram(psi_s, system.B),
        C_u=system.C @ pair_u.phi,
        C_s=projection.projected_map @ phi_s,
        C_hat_s=projection.coefficient_map @ phi_s,
        hsvs=None if hsvs is None else np.asarray(hsvs, dtype=float),
        phi_u=pair_u.phi, psi_u=pair_u.psi, phi_s=phi_s, psi_s=psi_s,
        weight=W,
        provenance={**(provenance or {}), 'coupling_su': coupling_su, 'coupling_us': coupling_us,
                    'output_order': projection.m},
    )
    logger.info('assembled reduced model with %d unstable and %d stable modes', model.n_u, model.r)
    return model


def project_initial_state(x0: np.ndarray, model: ReducedModel) -> np.ndarray:
    """Reduced initial condition ``a0 = [psi_u psi_s]^T W x0``."""
    if model.psi_s is None:
        raise ValidationError('model carries no adjoint modes')
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[0] != model.psi_s.shape[0]:
        raise ValidationError(f'initial state has dimension {x0.shape[0]}, expected {model.psi_s.shape[0]}')
    weight = as_weight(model.weight, x0.shape[0])
    return weight.gram(model.psi, x0)


def empirical_gramians(model: ReducedModel, horizon: float = None):
    """
    Diagonals of the controllability and observability Gramians of the stable
    block ``(A_s, B_s, C_hat_s)``: infinite-horizon Lyapunov solves, or
    finite-horizon integrals when ``horizon`` is given.

    Returns: (diag W_c, diag W_o)
    """
    vals = la.eigvals(model.A_s)
    if vals.size and np.max(vals.real) >= 0:
        raise StabilityError(f'reduced stable block has spectral abscissa {np.max(vals.real):.3e}; balancing failed')

    Qc = model.B_s @ model.B_s.T
    Qo = model.C_hat_s.T @ model.C_hat_s
    if horizon is None:
        Wc = solve_lyapunov(model.A_s, Qc)
        Wo = solve_lyapunov(model.A_s.T, Qo)
    else:
        Wc = finite_horizon_gramian(model.A_s, Qc, horizon)
        Wo = finite_horizon_gramian(model.A_s.T, Qo, horizon)
    return np.diag(Wc).copy(), np.diag(Wo).copy()


def hsv_table(balancing: Balancing, model: ReducedModel = None, horizon: float = None) -> pd.DataFrame:
    """Hankel singular values, with the reduced Gramian diagonals alongside when a model is given."""
    frame = pd.DataFrame({'index': np.arange(1, balancing.hsvs.size + 1), 'hsv': balancing.hsvs})
    if model is not None:
        wc, wo = empirical_gramians(model, horizon)
        frame['wc_diag'] = np.nan
        frame['wo_diag'] = np.nan
        frame.loc[:model.r - 1, 'wc_diag'] = wc
        frame.loc[:model.r - 1, 'wo_diag'] = wo
    return frame


@dataclass
class ImpulseComparison:
    """Per-channel error report and the underlying output traces."""
    report: pd.DataFrame
    traces: pd.DataFrame


def _trapezoid_l2(values: np.ndarray, dt: float) -> float:
    if values.size < 2:
        return float(np.sqrt(np.sum(values ** 2) * dt))
    return float(np.sqrt(trapezoid(values ** 2, dx=dt)))


def rom_impulse_compare(system: StateSpaceSystem, model: ReducedModel, projector: Optional[StableProjector],
                        projection: OutputProjection, dt: float = 0.01, horizon: float = 100.0,
                        record_every: int = 1) -> ImpulseComparison:
    """
    Impulse responses of the projected full plant against the stable block of the model.

    The full run starts from ``P_s B e_j`` and is projected every step; the model
    runs from ``a_s = B_s e_j`` with ``a_u = 0``. Both are stepped by
    Crank-Nicolson at ``dt`` and compared on the coefficient outputs
    ``theta* C x`` and ``C_hat_s a_s``.
    """
    n_steps = int(round(horizon / dt))
    full_step = Stepper(system.A, dt)
    rom_step = Stepper(LinearOperator.from_matrix(model.A_s), dt) if model.r else None
    coeff = projection.coefficient_map
    project = (lambda x: x) if projector is None else projector.apply

    x = project(system.B.copy())
    a = model.B_s.copy()
    times, full_out, rom_out = [], [], []
    for step in range(n_steps + 1):
        if step:
            x = project(full_step.step(x))
            a = rom_step.step(a) if rom_step is not None else a
        if step % record_every == 0:
            times.append(step * dt)
            full_out.append(coeff @ x)
            rom_out.append(model.C_hat_s @ a)

    full_out = np.stack(full_out)  # time x outputs x inputs
    rom_out = np.stack(rom_out)
    record_dt = dt * record_every

    rows, traces = [], []
    for j in range(system.p):
        trace = {'input': j, 'time': times}
        for i in range(full_out.shape[1]):
            err = full_out[:, i, j] - rom_out[:, i, j]
            ref = _trapezoid_l2(full_out[:, i, j], record_dt)
            l2 = _trapezoid_l2(err, record_dt)
            rows.append({'input': j, 'output': i, 'l2_error': l2,
                         'relative_l2_error': l2 / ref if ref > 0 else (0.0 if l2 == 0 else np.inf),
                         'peak_error': float(np.max(np.abs(err))), 'l2_full': ref})
            trace[f'full_{i}'] = full_out[:, i, j]
            trace[f'model_{i}'] = rom_out[:, i, j]
        traces.append(pd.DataFrame(trace))

    return ImpulseComparison(pd.DataFrame(rows), pd.concat(traces, ignore_index=True))


@dataclass
class BalancedPodResult:
    """Everything produced along the way by :func:`balanced_truncation_unstable`."""
    model: ReducedModel
    balancing: Balancing
    projection: OutputProjection
    projector: StableProjector
    direct: SnapshotMatrix
    adjoint: SnapshotMatrix
    right: Optional[UnstableEigenspace] = None
    left: Optional[UnstableEigenspace] = None


def balanced_truncation_unstable(system: StateSpaceSystem, r: int, m: int = None, dt: float = 0.01,
                                 n_steps: int = 9950, spacing: int = 50, k_max: int = 10, tol: float = 1.0e-8,
                                 seed: int = 0, pair_u: BiorthogonalPair = None,
                                 project_every_step: bool = True) -> BalancedPodResult:
    """
    Balanced POD of a plant with unstable eigenvalues, end to end.

    Unstable right/left eigenspaces are found by subspace iteration (or taken
    from ``pair_u``), the stable projector restricts impulse responses to the
    stable subspace, the outputs are projected on ``m`` POD modes (all outputs
    when ``m`` is ``None``), adjoint runs start from the projected output modes,
    and the balanced stable block of order ``r`` is assembled next to the exact
    unstable block.
    """
    right = left = None
    if pair_u is None:
        right = unstable_eigenspace(system, 'right', k_max=k_max, dt=dt, tol=tol, seed=seed)
        left = unstable_eigenspace(system, 'left', k_max=k_max, dt=dt, tol=tol, seed=seed)
        if right.n_unstable != left.n_unstable:
            raise RankError(f'right and left unstable eigenspaces differ in dimension '
                            f'({right.n_unstable} vs {left.n_unstable})', min(right.n_unstable, left.n_unstable))
        pair_u = biorthonormalize(right.basis, left.basis, system.weight)
    projector = stable_projector(pair_u)

    direct = impulse_response(system, projector, dt=dt, n_steps=n_steps, spacing=spacing,
                              project_every_step=project_every_step)
    basis = None
    if m is not None:
        basis = pod(direct.map(system.C, system.output_weight), m)
    projection = output_projection(system.C, basis, system.output_weight)

    adjoint = adjoint_response(system, projector, projection.adjoint_modes(system.weight), dt=dt, n_steps=n_steps,
                               spacing=spacing, project_every_step=project_every_step)
    balancing = balance(direct, adjoint, r)
    provenance = {'direct': direct.digest, 'adjoint': adjoint.digest, 'projector': projector.digest}
    model = assemble_rom(system, pair_u, balancing.phi, balancing.psi, projection, hsvs=balancing.hsvs,
                         provenance=provenance)
    return BalancedPodResult(model, balancing, projection, projector, direct, adjoint, right, left)
