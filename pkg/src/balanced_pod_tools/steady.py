"""
Steady states of a time-stepped plant as zeros of ``g(x) = x - Phi_T(x)``,
found by Newton's method with matrix-free GMRES inner solves, and natural
parameter continuation along a branch of steady states.
"""
from __future__ import annotations
from dataclasses import dataclass, field
import logging
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg as la

from .errors import ConvergenceError, LineSearchError, ValidationError
from .linops import LinearOperator
from .spectral import leading_eigenvalues

logger = logging.getLogger(__name__)

EPSILON0 = float(np.sqrt(np.finfo(float).eps))


@dataclass
class GmresResult:
    """Solution and relative residual history (one entry per Krylov iteration, plus the start)."""
    x: np.ndarray
    residuals: List[float]
    iterations: int
    converged: bool
    stagnated: bool = False
    restarts: int = 0


def gmres(apply_A: Callable[[np.ndarray], np.ndarray], b: np.ndarray, tol: float = 1.0e-6, max_iter: int = None,
          restart: int = 50, x0: np.ndarray = None) -> GmresResult:
    """
    Restarted GMRES for ``A x = b`` with only the action of ``A`` available.

    Arnoldi uses modified Gram-Schmidt with one reorthogonalization pass and
    the Hessenberg least-squares problem is updated with Givens rotations, so
    the residual is known at every iteration. A happy breakdown ends the cycle
    with the exact Krylov solution; a restart cycle that makes no progress is
    reported as stagnation.

    Args:
        apply_A: Operator action ``v -> A v``.
        b: Right-hand side.
        tol: Relative residual target ``|b - A x| / |b|``.
        max_iter: Cap on the total number of Krylov iterations (default ``2 n``).
        restart: Krylov dimension per cycle.
        x0: Starting guess (zero by default).

    Returns: GmresResult
    """
    b = np.asarray(b, dtype=float).ravel()
    if not np.all(np.isfinite(b)):
        raise ValidationError('right-hand side contains NaN or Inf entries')
    n = b.size
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return GmresResult(np.zeros(n), [0.0], 0, True)

    max_iter = 2 * n if max_iter is None else int(max_iter)
    restart = max(1, min(int(restart), n))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)

    r = b - apply_A(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    history = [beta / b_norm]
    total = 0
    cycles = 0
    stagnated = False

    while history[-1] > tol and total < max_iter:
        cycles += 1
        cycle_start = beta
        m = min(restart, max_iter - total)
        V = np.zeros((n, m + 1))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[:, 0] = r / beta

        k = 0
        for j in range(m):
            w = apply_A(V[:, j])
            for _ in range(2):
                for i in range(j + 1):
                    h = np.dot(V[:, i], w)
                    H[i, j] += h
                    w = w - h * V[:, i]
            h_next = np.linalg.norm(w)
            H[j + 1, j] = h_next

            for i in range(j):
                upper = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = upper
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = (1.0, 0.0) if denom == 0.0 else (H[j, j] / denom, H[j + 1, j] / denom)
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]

            k = j + 1
            total += 1
            history.append(abs(g[j + 1]) / b_norm)

            # happy breakdown: the Krylov space is invariant and holds the solution
            if h_next <= 1.0e-14 * max(denom, 1.0):
                break
            if history[-1] <= tol:
                break
            V[:, j + 1] = w / h_next

        y = la.solve_triangular(H[:k, :k], g[:k], lower=False)
        x = x + V[:, :k] @ y
        r = b - apply_A(x)
        beta = np.linalg.norm(r)
        logger.debug('gmres cycle %d: %d iterations, residual %.3e', cycles, k, beta / b_norm)

        if beta / b_norm <= tol or h_next <= 1.0e-14 * max(denom, 1.0):
            history[-1] = beta / b_norm
            break
        if beta >= (1.0 - 1.0e-12) * cycle_start:
            stagnated = True
            logger.warning('gmres stagnated over a restart cycle at relative residual %.3e', beta / b_norm)
            break

    converged = beta / b_norm <= tol
    return GmresResult(x, history, total, converged, stagnated, cycles - 1 if cycles else 0)


def jacobian_vector(g: Callable[[np.ndarray], np.ndarray], x: np.ndarray, v: np.ndarray, epsilon: float = None,
                    g_x: np.ndarray = None, epsilon0: float = EPSILON0) -> np.ndarray:
    """
    Forward-difference directional derivative ``[g(x + e v) - g(x)] / e``.

    Unless ``epsilon`` is given, ``e = epsilon0 (1 + |x|) / |v|``.
    """
    v = np.asarray(v, dtype=float)
    v_norm = np.linalg.norm(v)
    if v_norm == 0.0:
        raise ValidationError('direction vector must be nonzero')
    if epsilon is None:
        epsilon = epsilon0 * (1.0 + np.linalg.norm(x)) / v_norm
    if g_x is None:
        g_x = g(x)
    return (g(x + epsilon * v) - g_x) / epsilon


@dataclass
class FixedPointProblem:
    """
    Steady states of a time-stepper as zeros of ``g(x) = x - Phi_T(x)``.

    ``flow`` maps a state to the state ``T`` steps later; it must be a pure
    function of its argument.
    """
    flow: Callable[[np.ndarray, int], np.ndarray]
    T: int = 50
    epsilon0: float = EPSILON0
    newton_tol: float = 1.0e-10
    gmres_tol: float = 1.0e-6
    restart: int = 50
    gmres_max_iter: int = 500
    max_newton: int = 50
    line_search: bool = True
    max_halvings: int = 8

    def __post_init__(self):
        if int(self.T) < 1:
            raise ValidationError(f'T must be at least one step, got {self.T}')
        if self.epsilon0 <= 0:
            raise ValidationError('finite-difference increment must be positive')

    def residual(self, x: np.ndarray) -> np.ndarray:
        return x - self.flow(x, self.T)

    def settings(self) -> dict:
        return {'T': self.T, 'epsilon0': self.epsilon0, 'newton_tol': self.newton_tol, 'gmres_tol': self.gmres_tol,
                'restart': self.restart, 'max_newton': self.max_newton, 'line_search': self.line_search}


@dataclass
class NewtonReport:
    residuals: List[float] = field(default_factory=list)
    gmres_iterations: List[int] = field(default_factory=list)
    step_lengths: List[float] = field(default_factory=list)
    converged: bool = False
    settings: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.step_lengths)

    def to_frame(self) -> pd.DataFrame:
        count = len(self.residuals)
        pad = lambda vals: list(vals) + [np.nan] * (count - len(vals))
        return pd.DataFrame({'iteration': np.arange(count), 'residual': self.residuals,
                             'gmres_iterations': pad(self.gmres_iterations), 'step_length': pad(self.step_lengths)})


def newton_gmres(problem: FixedPointProblem, x_guess: np.ndarray) -> Tuple[np.ndarray, NewtonReport]:
    """
    Newton iteration on ``g(x) = x - Phi_T(x)`` with GMRES solves of ``Dg dx = -g``.

    Jacobian actions are forward differences of ``g``. With ``line_search``
    the step is halved (at most ``max_halvings`` times) until ``|g|`` drops.
    Convergence is ``|g| / sqrt(n) <= newton_tol``.

    Returns: (x*, NewtonReport)
    """
    x = np.array(x_guess, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError('initial guess contains NaN or Inf entries')
    root_n = np.sqrt(x.size)
    report = NewtonReport(settings=problem.settings())

    g = problem.residual(x)
    for k in range(problem.max_newton + 1):
        g_norm = np.linalg.norm(g)
        report.residuals.append(g_norm / root_n)
        logger.debug('newton iteration %d: residual %.3e', k, g_norm / root_n)
        if g_norm / root_n <= problem.newton_tol:
            report.converged = True
            logger.info('newton converged in %d iterations (residual %.3e)', k, g_norm / root_n)
            return x, report
        if k == problem.max_newton:
            break

        x_k, g_k = x, g
        solve = gmres(lambda v: jacobian_vector(problem.residual, x_k, v, g_x=g_k, epsilon0=problem.epsilon0),
                      -g, tol=problem.gmres_tol, max_iter=problem.gmres_max_iter, restart=problem.restart)
        report.gmres_iterations.append(solve.iterations)

        step = 1.0
        for _ in range(problem.max_halvings + 1):
            trial = x + step * solve.x
            g_trial = problem.residual(trial)
            if not problem.line_search or np.linalg.norm(g_trial) < g_norm:
                break
            step *= 0.5
        else:
            raise LineSearchError(f'line search failed to reduce the residual {g_norm / root_n:.3e} '
                                  f'after {problem.max_halvings} halvings', report)

        report.step_lengths.append(step)
        x, g = trial, g_trial

    raise ConvergenceError(f'newton did not converge in {problem.max_newton} iterations '
                           f'(residual {report.residuals[-1]:.3e})', report)


class SemiImplicitStepper(object):
    """
    Crank-Nicolson on a linear part ``L`` and second-order Adams-Bashforth on
    the nonlinear part ``N(x)`` plus the held input ``B u``.

    Fixed points of the step are exact steady states of ``x' = L x + N(x) + B u``.
    :meth:`step` keeps the previous explicit term between calls; :meth:`advance`
    and :meth:`flow` start from a fresh history, so ``flow`` is a pure function.
    """

    def __init__(self, L: Union[np.ndarray, LinearOperator], N: Callable[[np.ndarray], np.ndarray], dt: float,
                 B: np.ndarray = None):
        if dt <= 0:
            raise ValidationError(f'time step must be positive, got {dt}')
        L = L.to_dense() if isinstance(L, LinearOperator) else np.asarray(L, dtype=float)
        n = L.shape[0]
        self.dt = float(dt)
        self.N = N
        self.B = None if B is None else np.asarray(B, dtype=float).reshape(n, -1)
        eye = np.eye(n)
        self._lu = la.lu_factor(eye - 0.5 * dt * L)
        self._explicit = eye + 0.5 * dt * L
        self._previous = None

    def reset(self):
        self._previous = None

    def _forcing(self, x: np.ndarray, u) -> np.ndarray:
        f = self.N(x)
        if u is not None and self.B is not None:
            f = f + self.B @ np.atleast_1d(u)
        return f

    def step(self, x: np.ndarray, u: np.ndarray = None) -> np.ndarray:
        f = self._forcing(x, u)
        explicit = f if self._previous is None else 1.5 * f - 0.5 * self._previous
        self._previous = f
        return la.lu_solve(self._lu, self._explicit @ x + self.dt * explicit)

    def advance(self, x: np.ndarray, n_steps: int, u: np.ndarray = None) -> np.ndarray:
        self.reset()
        for _ in range(int(n_steps)):
            x = self.step(x, u)
        self.reset()
        return x

    def flow(self, x: np.ndarray, n_steps: int) -> np.ndarray:
        return self.advance(np.array(x, dtype=float), n_steps)


def semi_implicit_stepper(L, N, dt: float, B: np.ndarray = None) -> SemiImplicitStepper:
    return SemiImplicitStepper(L, N, dt, B)


@dataclass
class BranchPoint:
    mu: float
    state: np.ndarray
    converged: bool
    residual: float
    eigenvalues: np.ndarray
    newton_iterations: int


@dataclass
class SteadyBranch:
    """Steady states along a monotone sequence of parameter values."""
    points: List[BranchPoint] = field(default_factory=list)
    terminated: bool = False

    @property
    def parameters(self) -> np.ndarray:
        return np.array([p.mu for p in self.points])

    def critical_bracket(self) -> Optional[Tuple[float, float]]:
        """First pair of neighbouring points across which the leading eigenvalue changes sign of real part."""
        for left, right in zip(self.points[:-1], self.points[1:]):
            if not (left.eigenvalues.size and right.eigenvalues.size):
                continue
            a, b = left.eigenvalues[0].real, right.eigenvalues[0].real
            if a == 0.0 or b == 0.0 or np.sign(a) != np.sign(b):
                return tuple(sorted((left.mu, right.mu)))
        return None

    def to_frame(self, state_files: List[str] = None) -> pd.DataFrame:
        rows = []
        for i, point in enumerate(self.points):
            row = {'mu': point.mu, 'residual': point.residual, 'converged': point.converged,
                   'newton_iterations': point.newton_iterations}
            for j, lam in enumerate(point.eigenvalues):
                row[f'eig{j + 1}_real'] = lam.real
                row[f'eig{j + 1}_imag'] = lam.imag
            if state_files is not None:
                row['state_file'] = state_files[i]
            rows.append(row)
        return pd.DataFrame(rows)


def continuation(family: Callable[[float], FixedPointProblem], mu_start: float, mu_stop: float, step: float,
                 x_guess: np.ndarray, jacobian: Callable[[float, np.ndarray], np.ndarray] = None, n_eigs: int = 4,
                 max_halvings: int = 4) -> SteadyBranch:
    """
    Natural-parameter continuation: each steady state seeds the Newton solve at the next parameter.

    A failed Newton solve halves the parameter step (up to ``max_halvings``
    times) before the branch is terminated with the points found so far.
    With a ``jacobian(mu, x)`` the leading eigenvalues of the linearization are
    recorded so the branch can bracket a Hopf crossing.
    """
    if step == 0 or np.sign(step) != np.sign(mu_stop - mu_start) and mu_stop != mu_start:
        raise ValidationError(f'step {step} does not lead from {mu_start} to {mu_stop}')

    branch = SteadyBranch()
    direction = np.sign(step)
    x = np.array(x_guess, dtype=float)

    x_star, report = newton_gmres(family(mu_start), x)
    branch.points.append(_branch_point(mu_start, x_star, report, jacobian, n_eigs))
    x, mu = x_star, mu_start

    while direction * (mu_stop - mu) > 1.0e-12 * max(abs(step), 1.0):
        h = direction * min(abs(step), abs(mu_stop - mu))
        for _ in range(max_halvings + 1):
            try:
                x_next, report = newton_gmres(family(mu + h), x)
                break
            except ConvergenceError as err:
                logger.debug('continuation step %.3e from mu=%.4f failed (%s); halving', h, mu, err)
                h *= 0.5
        else:
            logger.warning('continuation terminated at mu=%.4f after %d step halvings', mu, max_halvings)
            branch.terminated = True
            return branch

        mu += h
        x = x_next
        branch.points.append(_branch_point(mu, x, report, jacobian, n_eigs))
        logger.debug('continuation point mu=%.4f residual %.2e', mu, report.residuals[-1])

    return branch


def _branch_point(mu: float, x: np.ndarray, report: NewtonReport, jacobian, n_eigs: int) -> BranchPoint:
    eigs = np.zeros(0, dtype=complex) if jacobian is None else leading_eigenvalues(jacobian(mu, x), n_eigs)
    return BranchPoint(mu, x, report.converged, report.residuals[-1], eigs, report.iterations)
