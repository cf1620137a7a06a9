"""
Dense linear-algebra kernels and the operator / state-space abstraction.

Every state-space computation in the package goes through the objects here:
an :class:`InnerProductWeight` defines the geometry of the state space, a
:class:`LinearOperator` carries both the action of ``A`` and of its adjoint with
respect to that weight, and a :class:`StateSpaceSystem` bundles the plant.
Weighted computations are reduced to unweighted ones through the factor ``F``
with ``W = F^T F``.
"""
from __future__ import annotations
from dataclasses import dataclass, field
import logging
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.linalg as la
from scipy.sparse.linalg import LinearOperator as ScipyLinearOperator, gmres as scipy_gmres

from .errors import (ConvergenceError, HyperbolicityError, NumericalError, SingularPairingError,
                     StabilityError, StabilizabilityError, ValidationError)

logger = logging.getLogger(__name__)

# largest dimension the dense oracle paths accept
DENSE_SIZE_CAP = 400

SCHEMES = ('crank-nicolson', 'exact-expm')


def _check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f'{name} contains NaN or Inf entries')
    return arr


def _check_square(name: str, arr: np.ndarray) -> np.ndarray:
    arr = _check_finite(name, arr)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError(f'{name} must be a square matrix, got shape {arr.shape}')
    return arr


class InnerProductWeight(object):
    """
    Symmetric positive-definite weight ``W`` defining ``<x, y>_W = x^T W y``.

    The weight is stored either as an identity marker, a positive diagonal, or a
    full SPD matrix; the Cholesky-like factor ``F`` (``W = F^T F``) is cached.
    """

    def __init__(self, n: int, diagonal: np.ndarray = None, matrix: np.ndarray = None):
        self._n = int(n)
        self._diag = None
        self._matrix = None
        self._factor = None

        if matrix is not None:
            W = _check_square('weight matrix', matrix)
            if W.shape[0] != self._n:
                raise ValidationError(f'weight matrix is {W.shape[0]}x{W.shape[0]}, expected {self._n}')
            scale = max(np.linalg.norm(W), 1.0e-300)
            if np.linalg.norm(W - W.T) > 1.0e-12 * scale:
                raise ValidationError('weight matrix is not symmetric')
            try:
                self._factor = la.cholesky(W, lower=False)
            except la.LinAlgError:
                raise ValidationError('weight matrix is not positive definite')
            self._matrix = W

        elif diagonal is not None:
            d = _check_finite('weight diagonal', diagonal).ravel()
            if d.size != self._n:
                raise ValidationError(f'weight diagonal has {d.size} entries, expected {self._n}')
            if np.any(d <= 0.0):
                raise ValidationError('weight diagonal must be strictly positive')
            self._diag = d
            self._sqrt_diag = np.sqrt(d)

    def __repr__(self):
        kind = 'identity' if self.is_identity else ('diagonal' if self._diag is not None else 'dense')
        return f'{self.__class__.__name__} (n={self._n}, {kind})'

    @classmethod
    def identity(cls, n: int) -> InnerProductWeight:
        return cls(n)

    @classmethod
    def from_diagonal(cls, diagonal: np.ndarray) -> InnerProductWeight:
        diagonal = np.asarray(diagonal, dtype=float).ravel()
        return cls(diagonal.size, diagonal=diagonal)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> InnerProductWeight:
        matrix = np.asarray(matrix, dtype=float)
        return cls(matrix.shape[0], matrix=matrix)

    @property
    def dim(self) -> int:
        return self._n

    @property
    def is_identity(self) -> bool:
        return self._diag is None and self._matrix is None

    @property
    def matrix(self) -> np.ndarray:
        """Dense ``W``."""
        if self._matrix is not None:
            return self._matrix
        if self._diag is not None:
            return np.diag(self._diag)
        return np.eye(self._n)

    @property
    def factor_matrix(self) -> np.ndarray:
        """Dense ``F`` with ``W = F^T F``."""
        if self._factor is not None:
            return self._factor
        if self._diag is not None:
            return np.diag(self._sqrt_diag)
        return np.eye(self._n)

    @staticmethod
    def _column_scale(d: np.ndarray, x: np.ndarray) -> np.ndarray:
        return d * x if x.ndim == 1 else d.reshape(-1, 1) * x

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``W x`` for a vector or a block of column vectors."""
        if self._matrix is not None:
            return self._matrix @ x
        if self._diag is not None:
            return self._column_scale(self._diag, x)
        return np.array(x, dtype=float, copy=True)

    def solve(self, x: np.ndarray) -> np.ndarray:
        """``W^{-1} x``."""
        if self._matrix is not None:
            return la.cho_solve((self._factor, False), x)
        if self._diag is not None:
            return self._column_scale(1.0 / self._diag, x)
        return np.array(x, dtype=float, copy=True)

    def factor(self, x: np.ndarray) -> np.ndarray:
        """``F x``."""
        if self._matrix is not None:
            return self._factor @ x
        if self._diag is not None:
            return self._column_scale(self._sqrt_diag, x)
        return np.array(x, dtype=float, copy=True)

    def factor_solve(self, y: np.ndarray) -> np.ndarray:
        """``F^{-1} y``."""
        if self._matrix is not None:
            return la.solve_triangular(self._factor, y, lower=False)
        if self._diag is not None:
            return self._column_scale(1.0 / self._sqrt_diag, y)
        return np.array(y, dtype=float, copy=True)

    def gram(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Pairing matrix ``X^T W Y``."""
        return np.asarray(X).T @ self.apply(np.asarray(Y, dtype=float))

    def inner(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.dot(x, self.apply(np.asarray(y, dtype=float))))

    def norm(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.factor(np.asarray(x, dtype=float))))

    def digest(self) -> str:
        from .io import array_hash
        if self.is_identity:
            return f'identity-{self._n}'
        return array_hash(self._diag if self._diag is not None else self._matrix)


WeightLike = Union[InnerProductWeight, np.ndarray, None]


def as_weight(weight: WeightLike, n: int) -> InnerProductWeight:
    """Coerce ``None``, a diagonal vector or a matrix into an :class:`InnerProductWeight`."""
    if weight is None:
        return InnerProductWeight.identity(n)
    if isinstance(weight, InnerProductWeight):
        if weight.dim != n:
            raise ValidationError(f'weight has dimension {weight.dim}, expected {n}')
        return weight
    weight = np.asarray(weight, dtype=float)
    if weight.ndim == 1:
        out = InnerProductWeight.from_diagonal(weight)
    else:
        out = InnerProductWeight.from_matrix(weight)
    if out.dim != n:
        raise ValidationError(f'weight has dimension {out.dim}, expected {n}')
    return out


class LinearOperator(object):
    """
    Square operator with its adjoint taken in the ``W`` inner product, so that
    ``<A x, z>_W = <x, A* z>_W``.

    Realized either densely (``matrix``) or through matrix-free callbacks.
    """

    def __init__(self, n: int, matvec: Callable, adjoint_matvec: Callable, weight: WeightLike = None,
                 matrix: np.ndarray = None, adjoint_matrix: np.ndarray = None):
        self.n = int(n)
        self.weight = as_weight(weight, self.n)
        self._matvec = matvec
        self._adjoint_matvec = adjoint_matvec
        self.matrix = matrix
        self.adjoint_matrix = adjoint_matrix
        self._norm = None

    def __repr__(self):
        return f'{self.__class__.__name__} (n={self.n}, {self.realization})'

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, weight: WeightLike = None) -> LinearOperator:
        """Dense operator; the adjoint ``W^{-1} A^T W`` is formed once."""
        A = _check_square('operator matrix', matrix)
        W = as_weight(weight, A.shape[0])
        A_adj = A.T.copy() if W.is_identity else W.solve(A.T @ W.matrix)
        return cls(A.shape[0], lambda x: A @ x, lambda z: A_adj @ z, weight=W, matrix=A, adjoint_matrix=A_adj)

    @classmethod
    def from_callbacks(cls, n: int, matvec: Callable, adjoint_matvec: Callable,
                       weight: WeightLike = None) -> LinearOperator:
        """Matrix-free operator; callbacks take and return 1-D vectors."""
        return cls(n, matvec, adjoint_matvec, weight=weight)

    @property
    def realization(self) -> str:
        return 'dense' if self.matrix is not None else 'callback'

    @property
    def is_dense(self) -> bool:
        return self.matrix is not None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.n, self.n

    def _act(self, fn: Callable, dense: Optional[np.ndarray], x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValidationError(f'operator of dimension {self.n} applied to array of shape {x.shape}')
        if dense is not None:
            return dense @ x
        if x.ndim == 1:
            return np.asarray(fn(x), dtype=float)
        if x.shape[1] == 0:
            return np.zeros_like(x)
        return np.column_stack([fn(col) for col in x.T])

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``A x`` for a vector or block of columns."""
        return self._act(self._matvec, self.matrix, x)

    def apply_adjoint(self, z: np.ndarray) -> np.ndarray:
        """``A* z`` (the ``W`` adjoint)."""
        return self._act(self._adjoint_matvec, self.adjoint_matrix, z)

    def adjoint(self) -> LinearOperator:
        """The adjoint as an operator in its own right."""
        return LinearOperator(self.n, self._adjoint_matvec, self._matvec, weight=self.weight,
                              matrix=self.adjoint_matrix, adjoint_matrix=self.matrix)

    def to_dense(self, cap: int = DENSE_SIZE_CAP) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        if self.n > cap:
            raise ValidationError(f'refusing to densify an operator of dimension {self.n} (cap {cap})')
        return self.apply(np.eye(self.n))

    def norm_estimate(self, iterations: int = 20, seed: int = 0) -> float:
        """Operator norm induced by ``W``: exact for dense operators, power iteration otherwise."""
        if self._norm is not None:
            return self._norm

        if self.matrix is not None:
            W = self.weight
            # F A F^{-1} has the W-induced norm of A
            scaled = self.matrix if W.is_identity else W.factor(la.solve(W.factor_matrix.T, self.matrix.T).T)
            self._norm = float(np.linalg.norm(scaled, 2))
        else:
            rng = np.random.default_rng(seed)
            v = rng.standard_normal(self.n)
            v /= self.weight.norm(v)
            estimate = 0.0
            for _ in range(iterations):
                w = self.apply_adjoint(self.apply(v))
                estimate = np.sqrt(max(self.weight.inner(v, w), 0.0))
                nrm = self.weight.norm(w)
                if nrm == 0.0:
                    break
                v = w / nrm
            self._norm = float(estimate)

        return self._norm


@dataclass
class StateSpaceSystem:
    """
    The plant ``x' = A x + B u``, ``y = C x`` on a weighted state space.

    ``output_weight`` defines the output-space geometry (identity unless the
    output is itself a field, e.g. ``C = I``). A nonlinear plant additionally
    carries its right-hand side ``rhs(x, u)`` and a factory returning its
    time-stepper for a given ``dt``.
    """
    A: LinearOperator
    B: np.ndarray
    C: np.ndarray
    weight: InnerProductWeight = None
    output_weight: InnerProductWeight = None
    rhs: Callable = None
    nonlinear_stepper: Callable = None
    name: str = ''

    def __post_init__(self):
        n = self.A.n
        self.weight = self.A.weight if self.weight is None else as_weight(self.weight, n)
        self.B = _check_finite('B', self.B)
        self.C = _check_finite('C', self.C)
        if self.B.ndim == 1:
            self.B = self.B.reshape(-1, 1)
        if self.C.ndim == 1:
            self.C = self.C.reshape(1, -1)
        if self.B.shape[0] != n:
            raise ValidationError(f'B has {self.B.shape[0]} rows, expected {n}')
        if self.C.shape[1] != n:
            raise ValidationError(f'C has {self.C.shape[1]} columns, expected {n}')
        self.output_weight = as_weight(self.output_weight, self.C.shape[0])

    def __repr__(self):
        return f'{self.__class__.__name__} ({self.name or "plant"}: n={self.n}, p={self.p}, q={self.q})'

    @property
    def n(self) -> int:
        return self.A.n

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[0]

    @property
    def is_nonlinear(self) -> bool:
        return self.rhs is not None

    @property
    def C_adjoint(self) -> np.ndarray:
        """``C* = W^{-1} C^T W_y`` mapping outputs back to states."""
        return self.weight.solve(self.C.T @ self.output_weight.matrix)

    def eigenvalues(self) -> np.ndarray:
        return la.eigvals(self.A.to_dense())

    def check_hyperbolic(self, tol: float = 1.0e-8) -> np.ndarray:
        """Raise :class:`HyperbolicityError` if any eigenvalue sits within ``tol`` of the imaginary axis."""
        vals = self.eigenvalues()
        close = vals[np.abs(vals.real) <= tol]
        if close.size:
            raise HyperbolicityError(f'eigenvalue {close[0]:.3e} lies on the imaginary axis (tol {tol:g})')
        return vals

    def stepper(self, dt: float, scheme: str = 'crank-nicolson') -> Stepper:
        """Time-stepper for the plant; nonlinear plants use their own integrator."""
        if self.nonlinear_stepper is not None:
            return self.nonlinear_stepper(dt)
        return Stepper(self.A, dt, scheme=scheme, B=self.B)


class Stepper(object):
    """
    One-step propagator ``x+ = M x + G u`` with the input held over the step.

    Dense operators cache ``M`` (and ``G``); matrix-free operators solve the
    Crank-Nicolson factor with GMRES at every step.
    """

    def __init__(self, A: LinearOperator, dt: float, scheme: str = 'crank-nicolson', B: np.ndarray = None,
                 adjoint: bool = False):
        if dt <= 0:
            raise ValidationError(f'time step must be positive, got {dt}')
        if scheme not in SCHEMES:
            raise ValidationError(f'scheme must be one of {SCHEMES}, got "{scheme}"')

        self.dt = float(dt)
        self.scheme = scheme
        self.n = A.n
        self.B = None if B is None else np.asarray(B, dtype=float).reshape(A.n, -1)
        self._step_matrix = None
        self._input_matrix = None

        dense = (A.adjoint_matrix if adjoint else A.matrix)
        self._apply = A.apply_adjoint if adjoint else A.apply

        if dense is not None:
            self._build_dense(dense)
        elif scheme == 'exact-expm':
            raise ValidationError('exact stepping requires a dense operator')

    def _build_dense(self, A: np.ndarray):
        n, dt = A.shape[0], self.dt
        eye = np.eye(n)

        if self.scheme == 'crank-nicolson':
            lu, piv = la.lu_factor(eye - 0.5 * dt * A, check_finite=False)
            pivots = np.abs(np.diag(lu))
            if pivots.min() <= 1.0e-14 * max(pivots.max(), 1.0):
                raise SingularPairingError('Crank-Nicolson factor (I - dt/2 A) is singular: dt * lambda = 2')
            self._step_matrix = la.lu_solve((lu, piv), eye + 0.5 * dt * A)
            if self.B is not None:
                self._input_matrix = la.lu_solve((lu, piv), dt * self.B)

        else:
            if self.B is None:
                self._step_matrix = la.expm(A * dt)
            else:
                # augmented exponential gives the held-input response in the upper right block
                p = self.B.shape[1]
                aug = np.zeros((n + p, n + p))
                aug[:n, :n] = A
                aug[:n, n:] = self.B
                E = la.expm(aug * dt)
                self._step_matrix = E[:n, :n]
                self._input_matrix = E[:n, n:]

    @property
    def step_matrix(self) -> Optional[np.ndarray]:
        return self._step_matrix

    def _cn_matrix_free(self, x: np.ndarray) -> np.ndarray:
        dt, n = self.dt, self.n
        op = ScipyLinearOperator((n, n), matvec=lambda v: v - 0.5 * dt * self._apply(np.ravel(v)), dtype=float)
        rhs = x + 0.5 * dt * self._apply(x)
        sol, info = scipy_gmres(op, rhs, x0=x, rtol=1.0e-12, atol=0.0, restart=min(n, 50), maxiter=20 * n)
        if info != 0:
            raise ConvergenceError(f'Crank-Nicolson solve did not converge (info={info})')
        return sol

    def step(self, x: np.ndarray, u: np.ndarray = None) -> np.ndarray:
        """Advance a state (or block of states) by one step."""
        if self._step_matrix is not None:
            out = self._step_matrix @ x
        elif x.ndim == 1:
            out = self._cn_matrix_free(x)
        else:
            out = np.column_stack([self._cn_matrix_free(col) for col in x.T])

        if u is not None and self.B is not None:
            u = np.atleast_1d(np.asarray(u, dtype=float))
            if self._input_matrix is not None:
                out = out + self._input_matrix @ u
            else:
                # matrix-free CN input term: solve (I - dt/2 A) g = dt B u
                out = out + self._cn_input(u)
        return out

    def _cn_input(self, u: np.ndarray) -> np.ndarray:
        dt, n = self.dt, self.n
        op = ScipyLinearOperator((n, n), matvec=lambda v: v - 0.5 * dt * self._apply(np.ravel(v)), dtype=float)
        sol, info = scipy_gmres(op, dt * (self.B @ u), rtol=1.0e-12, atol=0.0, restart=min(n, 50), maxiter=20 * n)
        if info != 0:
            raise ConvergenceError(f'Crank-Nicolson input solve did not converge (info={info})')
        return sol

    def advance(self, x: np.ndarray, n_steps: int, u: np.ndarray = None) -> np.ndarray:
        for _ in range(int(n_steps)):
            x = self.step(x, u)
        return x


def weighted_inner(x: np.ndarray, y: np.ndarray, W: WeightLike = None) -> float:
    """
    Weighted inner product ``x^T W y``.

    Args:
        x: First vector.
        y: Second vector.
        W: Weight (``None`` for identity, a positive diagonal, an SPD matrix, or an
            :class:`InnerProductWeight`).

    Returns: float
    """
    x = _check_finite('x', x).ravel()
    y = _check_finite('y', y).ravel()
    if x.size != y.size:
        raise ValidationError(f'dimension mismatch: {x.size} vs {y.size}')
    weight = as_weight(W, x.size)
    return weight.inner(x, y)


def adjoint_residual(A: LinearOperator, W: WeightLike = None, trials: int = 100, seed: int = 0) -> float:
    """
    Largest normalized duality defect ``|<Ax,z>_W - <x,A*z>_W| / (|x|_W |z|_W |A|)``
    over random pairs; deterministic for a fixed seed.
    """
    if trials < 1:
        raise ValidationError('at least one trial is required')
    weight = A.weight if W is None else as_weight(W, A.n)
    rng = np.random.default_rng(seed)
    scale = max(A.norm_estimate(), np.finfo(float).tiny)

    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(A.n)
        z = rng.standard_normal(A.n)
        lhs = weight.inner(A.apply(x), z)
        rhs = weight.inner(x, A.apply_adjoint(z))
        worst = max(worst, abs(lhs - rhs) / (weight.norm(x) * weight.norm(z) * scale))

    return worst


def svd(M: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Thin singular value decomposition ``M = U diag(s) V^T``.

    Returns: (U, s, V) with ``s`` nonincreasing and orthonormal columns in U and V.
    """
    M = _check_finite('M', M)
    if M.ndim != 2:
        raise ValidationError(f'svd needs a matrix, got {M.ndim} dimensions')
    try:
        U, s, Vt = la.svd(M, full_matrices=False, lapack_driver='gesdd')
    except la.LinAlgError:
        logger.debug('gesdd failed, retrying with gesvd')
        try:
            U, s, Vt = la.svd(M, full_matrices=False, lapack_driver='gesvd')
        except la.LinAlgError as err:
            raise ConvergenceError(f'singular value decomposition did not converge: {err}')
    return U, s, Vt.T


@dataclass
class EigenDecomposition:
    """
    Eigenvalues sorted by decreasing real part, with real block-form bases.

    Complex pairs ``a +/- ib`` occupy two columns ``[Re v, Im v]`` and the 2x2
    block ``[[a, b], [-b, a]]`` of ``blocks`` so that ``A right = right blocks``
    and ``left^T A = blocks left^T`` with ``left^T right = I``.
    """
    values: np.ndarray
    right: np.ndarray
    left: np.ndarray
    blocks: np.ndarray

    @property
    def spectral_abscissa(self) -> float:
        return float(np.max(self.values.real)) if self.values.size else -np.inf


def eig_dense(A: np.ndarray, cap: int = DENSE_SIZE_CAP, tol: float = 1.0e-10) -> EigenDecomposition:
    """Dense eigen-decomposition in real block form (LAPACK Hessenberg/real-Schur QR)."""
    A = _check_square('A', A)
    n = A.shape[0]
    if n > cap:
        raise ValidationError(f'dense eigensolver capped at n={cap}, got {n}')

    try:
        vals, vecs = la.eig(A)
    except la.LinAlgError as err:
        raise ConvergenceError(f'eigenvalue iteration failed: {err}')

    scale = max(np.linalg.norm(A, 1), 1.0)

    # one entry per real eigenvalue or conjugate pair, keyed on the member with positive imaginary part
    entries = []
    for i, lam in enumerate(vals):
        if abs(lam.imag) <= tol * scale:
            entries.append((lam.real, 0.0, vecs[:, i].real))
        elif lam.imag > 0:
            entries.append((lam.real, lam.imag, vecs[:, i]))
    entries.sort(key=lambda e: (-e[0], -e[1]))

    values, columns = [], []
    blocks = np.zeros((n, n))
    col = 0
    for re, im, vec in entries:
        if im == 0.0:
            v = np.real(vec)
            columns.append(v / np.linalg.norm(v))
            blocks[col, col] = re
            values.append(complex(re, 0.0))
            col += 1
        else:
            v = vec / np.linalg.norm(vec)
            columns.extend([v.real, v.imag])
            blocks[col:col + 2, col:col + 2] = [[re, im], [-im, re]]
            values.extend([complex(re, im), complex(re, -im)])
            col += 2

    right = np.column_stack(columns) if columns else np.zeros((n, 0))
    try:
        left = np.linalg.inv(right).T
    except np.linalg.LinAlgError:
        raise NumericalError('matrix is defective: eigenvector basis is singular')

    residual = np.linalg.norm(A @ right - right @ blocks)
    if residual > 1.0e-8 * scale * max(np.linalg.norm(right), 1.0):
        logger.warning('eigen-decomposition residual %.2e exceeds 1e-8 |A|; matrix may be nearly defective',
                       residual)

    return EigenDecomposition(np.array(values), right, left, blocks)


def solve_lyapunov(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """
    Solve ``A X + X A^T + Q = 0`` for stable ``A`` (Bartels-Stewart).

    The solution equals the Gramian integral ``int_0^inf e^{At} Q e^{A^T t} dt``.
    """
    A = _check_square('A', A)
    Q = _check_square('Q', Q)
    if Q.shape != A.shape:
        raise ValidationError(f'Q has shape {Q.shape}, expected {A.shape}')
    if A.shape[0] == 0:
        return np.zeros((0, 0))

    abscissa = np.max(la.eigvals(A).real)
    if abscissa >= 0.0:
        raise StabilityError(f'Lyapunov solve needs a stable A; spectral abscissa is {abscissa:.3e}')

    X = la.solve_continuous_lyapunov(A, -Q)
    X = 0.5 * (X + X.T)

    q_norm = np.linalg.norm(Q)
    residual = np.linalg.norm(A @ X + X @ A.T + Q)
    if q_norm > 0 and residual > 1.0e-9 * q_norm:
        logger.warning('Lyapunov residual %.2e exceeds 1e-9 |Q|', residual / q_norm)
    return X


def finite_horizon_gramian(A: np.ndarray, Q: np.ndarray, horizon: float) -> np.ndarray:
    """``int_0^T e^{At} Q e^{A^T t} dt`` from the augmented matrix exponential."""
    A = _check_square('A', A)
    n = A.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = -A
    aug[:n, n:] = Q
    aug[n:, n:] = A.T
    E = la.expm(aug * horizon)
    X = E[n:, n:].T @ E[:n, n:]
    return 0.5 * (X + X.T)


def solve_care(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """
    Stabilizing solution of ``A^T P + P A - P B R^{-1} B^T P + Q = 0`` (Hamiltonian Schur method).
    """
    A = _check_square('A', A)
    B = _check_finite('B', B).reshape(A.shape[0], -1)
    Q = _check_square('Q', Q)
    R = _check_square('R', np.atleast_2d(R))
    if R.shape[0] != B.shape[1]:
        raise ValidationError(f'R is {R.shape[0]}x{R.shape[0]}, expected {B.shape[1]}')

    try:
        P = la.solve_continuous_are(A, B, Q, R)
    except (la.LinAlgError, ValueError) as err:
        raise StabilizabilityError(f'Riccati equation has no stabilizing solution '
                                   f'(Hamiltonian eigenvalues on the imaginary axis?): {err}')
    P = 0.5 * (P + P.T)

    gain = la.solve(R, B.T @ P)
    closed = la.eigvals(A - B @ gain)
    if np.max(closed.real) >= 0.0:
        worst = closed[np.argmax(closed.real)]
        raise StabilizabilityError(f'Riccati solution is not stabilizing (closed-loop pole {worst:.3e})', worst)

    residual = np.linalg.norm(A.T @ P + P @ A - P @ B @ gain + Q)
    if residual > 1.0e-8 * max(np.linalg.norm(Q), 1.0):
        logger.warning('Riccati residual %.2e exceeds 1e-8 max(|Q|, 1)', residual)
    return P


def propagate(A: LinearOperator, x: np.ndarray, dt: float, scheme: str = 'crank-nicolson') -> np.ndarray:
    """
    Advance ``x' = A x`` by one step.

    Crank-Nicolson: ``x+ = (I - dt/2 A)^{-1} (I + dt/2 A) x``; exact: ``x+ = e^{A dt} x``.
    """
    if not isinstance(A, LinearOperator):
        A = LinearOperator.from_matrix(np.atleast_2d(A))
    x = _check_finite('x', x)
    return Stepper(A, dt, scheme=scheme).step(x)


def weighted_orthonormalize(Q: np.ndarray, W: InnerProductWeight) -> np.ndarray:
    """
    Columns spanning the same nested subspaces as ``Q`` but ``W``-orthonormal.

    Householder QR of ``F Q``; signs fixed so the triangular factor has a
    nonnegative diagonal (a positive multiple of a column maps to its unit vector).
    """
    if Q.shape[1] == 0:
        return np.array(Q, dtype=float, copy=True)
    Qr, R = la.qr(W.factor(np.asarray(Q, dtype=float)), mode='economic')
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return W.factor_solve(Qr * signs)
