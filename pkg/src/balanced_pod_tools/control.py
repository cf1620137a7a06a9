"""
LQR state feedback and Kalman observers designed on a reduced model, noise
covariance estimation from data, and closed-loop simulation of the plant
with the resulting compensator.

Sign convention: the control input is ``u = K a`` with ``K = -R^{-1} B^T P``,
so the closed loop is ``A + B K``.
"""
from __future__ import annotations
from dataclasses import dataclass, field
import logging
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.linalg as la
from scipy.integrate import trapezoid

from .balpod import ReducedModel
from .errors import (DetectabilityError, PlantBlowUpError, StabilityError, StabilizabilityError,
                     ValidationError)
from .linops import InnerProductWeight, LinearOperator, StateSpaceSystem, Stepper, as_weight, solve_care
from .snapshots import SnapshotMatrix

logger = logging.getLogger(__name__)

# default control penalty R = c I
CONTROL_PENALTY = 1.0e5

# smallest normalized PBH singular value accepted as controllable / observable
PBH_TOL = 1.0e-10

# norm growth treated as blow-up of a simulated plant
BLOWUP_FACTOR = 1.0e6


def _pbh_margins(A: np.ndarray, M: np.ndarray, side: str) -> List[tuple]:
    """
    Smallest singular value of ``[A - lambda I, B]`` (``side='input'``) or
    ``[A - lambda I; C]`` (``side='output'``) for every eigenvalue with nonnegative real part.
    """
    n = A.shape[0]
    scale = max(np.linalg.norm(A, 2), np.linalg.norm(M, 2) if M.size else 0.0, 1.0)
    margins = []
    for lam in la.eigvals(A):
        if lam.real < 0:
            continue
        shifted = A - lam * np.eye(n)
        test = np.hstack([shifted, M]) if side == 'input' else np.vstack([shifted, M])
        margins.append((lam, la.svdvals(test)[-1] / scale))
    return margins


def check_stabilizable(A: np.ndarray, B: np.ndarray, tol: float = PBH_TOL) -> List[tuple]:
    """PBH test on the unstable eigenvalues; raises :class:`StabilizabilityError` naming the unreachable one."""
    margins = _pbh_margins(A, B, 'input')
    for lam, margin in margins:
        if margin < tol:
            raise StabilizabilityError(f'unstable eigenvalue {lam:.4g} cannot be reached through the inputs '
                                       f'(PBH margin {margin:.2e})', lam)
    return margins


def check_detectable(A: np.ndarray, C: np.ndarray, tol: float = PBH_TOL) -> List[tuple]:
    """PBH test on the unstable eigenvalues; raises :class:`DetectabilityError` naming the invisible one."""
    margins = _pbh_margins(A, C, 'output')
    for lam, margin in margins:
        if margin < tol:
            raise DetectabilityError(f'unstable eigenvalue {lam:.4g} is invisible to the sensors '
                                     f'(PBH margin {margin:.2e})', lam)
    return margins


@dataclass
class LqrResult:
    K: np.ndarray
    P: np.ndarray
    poles: np.ndarray
    spillover: dict = field(default_factory=dict)

    @property
    def spectral_abscissa(self) -> float:
        return float(np.max(self.poles.real)) if self.poles.size else -np.inf


def lqr(A, B, Q, R) -> LqrResult:
    """
    Continuous-time LQR: ``K = -R^{-1} B^T P`` with ``P`` the stabilizing Riccati solution.

    The pair is checked for stabilizability first so an unreachable unstable
    direction is named in the error.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    check_stabilizable(A, B)
    P = solve_care(A, B, Q, R)
    K = -la.solve(R, B.T @ P)
    return LqrResult(K, P, la.eigvals(A + B @ K))


def _state_weight(model: ReducedModel, output_weight) -> np.ndarray:
    W_y = as_weight(output_weight, model.C.shape[0])
    return model.C.T @ W_y.apply(model.C)


def lqr_gain(model: ReducedModel, Q: np.ndarray = None, R: np.ndarray = None, c: float = CONTROL_PENALTY,
             output_weight: InnerProductWeight = None) -> LqrResult:
    """
    Full reduced-state LQR gain.

    Args:
        model: Reduced model.
        Q: State weight; defaults to the output energy ``C~^T W_y C~``.
        R: Input weight; defaults to ``c I``.
        c: Control penalty used when ``R`` is not given.
        output_weight: Output-space weight ``W_y`` for the default ``Q``.

    Returns: LqrResult
    """
    if c <= 0:
        raise ValidationError(f'control penalty must be positive, got {c}')
    Q = _state_weight(model, output_weight) if Q is None else np.asarray(Q, dtype=float)
    R = c * np.eye(model.p) if R is None else np.asarray(R, dtype=float)
    result = lqr(model.A, model.B, Q, R)
    logger.info('LQR gain: closed-loop spectral abscissa %.4f', result.spectral_abscissa)
    return result


def lqr_gain_unstable_only(model: ReducedModel, Q_u: np.ndarray = None, R: np.ndarray = None,
                           c: float = CONTROL_PENALTY, output_weight: InnerProductWeight = None) -> LqrResult:
    """
    LQR gain designed on the unstable block alone, zero-padded to the full reduced state.

    The closed loop of the whole reduced model is still evaluated and stored
    as a spillover diagnostic.
    """
    if model.n_u == 0:
        raise ValidationError('model has no unstable block')
    if Q_u is None:
        W_y = as_weight(output_weight, model.C_u.shape[0])
        Q_u = model.C_u.T @ W_y.apply(model.C_u)
    R = c * np.eye(model.p) if R is None else np.asarray(R, dtype=float)

    block = lqr(model.A_u, model.B_u, Q_u, R)
    K = np.hstack([block.K, np.zeros((model.p, model.r))])
    poles = la.eigvals(model.A + model.B @ K)
    spillover = {'block_abscissa': block.spectral_abscissa, 'model_abscissa': float(np.max(poles.real))}
    if spillover['model_abscissa'] >= 0:
        logger.warning('unstable-only gain leaves the reduced model unstable (abscissa %.3e)',
                       spillover['model_abscissa'])
    return LqrResult(K, block.P, poles, spillover)


@dataclass
class SensorMap:
    """Rows of the full output map picked out by point sensors, ``C_bar = M C~``."""
    rows: List[int]
    C_bar: np.ndarray
    margins: List[tuple]

    @property
    def s(self) -> int:
        return len(self.rows)

    def selection(self, q: int) -> np.ndarray:
        """The 0/1 selection matrix ``M`` (``s x q``)."""
        M = np.zeros((self.s, q))
        M[np.arange(self.s), self.rows] = 1.0
        return M

    def margin_table(self) -> pd.DataFrame:
        return pd.DataFrame({'eigenvalue_real': [np.real(lam) for lam, _ in self.margins],
                             'eigenvalue_imag': [np.imag(lam) for lam, _ in self.margins],
                             'pbh_margin': [m for _, m in self.margins]})


def sensor_map(model: ReducedModel, sensor_rows: Sequence[int], tol: float = PBH_TOL) -> SensorMap:
    """
    Sensor output map ``C_bar = M [C_u C_s]``; the unstable modes must be
    observable through it (PBH margins are kept for reporting).
    """
    rows = [int(r) for r in sensor_rows]
    q = model.C.shape[0]
    if not rows:
        raise ValidationError('at least one sensor is required')
    bad = [r for r in rows if r < 0 or r >= q]
    if bad:
        raise ValidationError(f'sensor rows {bad} outside the output dimension {q}')
    C_bar = model.C[rows]
    margins = check_detectable(model.A, C_bar, tol)
    return SensorMap(rows, C_bar, margins)


def galerkin_rhs(model: ReducedModel, rhs: Callable, base_state: np.ndarray = None,
                 weight: InnerProductWeight = None) -> Callable:
    """
    Reduced nonlinear right-hand side ``f(a) = psi^T W F(x0 + phi a)``, the
    plant dynamics projected on the balancing modes with the adjoint modes.
    """
    if model.phi is None:
        raise ValidationError('model carries no mode bases')
    W = as_weight(weight if weight is not None else model.weight, model.phi.shape[0])
    x0 = np.zeros(model.phi.shape[0]) if base_state is None else np.asarray(base_state, dtype=float)
    psi, phi = model.psi, model.phi

    def reduced(a: np.ndarray, u: np.ndarray = None) -> np.ndarray:
        return W.gram(psi, rhs(x0 + phi @ a, u))

    return reduced


@dataclass
class NoiseModel:
    """Process and sensor noise covariances estimated from a representative run."""
    Q_w: np.ndarray
    R_v: np.ndarray
    samples: int
    shrinkage: float = 0.0
    regularized: bool = False


def _shrink(S: np.ndarray, samples: int) -> tuple:
    dim = S.shape[0]
    if samples >= dim:
        return S, 0.0
    alpha = 1.0 - samples / dim
    return (1.0 - alpha) * S + alpha * np.diag(np.diag(S)), alpha


def estimate_noise(model: ReducedModel, trajectory: SnapshotMatrix, reduced_rhs: Callable, sensors: SensorMap,
                   sensor_data: np.ndarray, base_state: np.ndarray = None) -> NoiseModel:
    """
    Process and sensor noise second moments along a measured trajectory.

    ``a = psi^T W (x - x0)`` for every snapshot; process noise is
    ``w = f(a) - A~ a`` and sensor noise ``v = y - C_bar a``. The covariances
    are raw (uncentered) second moments. ``R_v`` is lifted by
    ``1e-12 tr(R_v)/s I`` when singular, and both estimates shrink toward their
    diagonals when there are fewer samples than dimensions.
    """
    if model.psi is None:
        raise ValidationError('model carries no adjoint modes')
    data = np.atleast_2d(np.asarray(sensor_data, dtype=float))
    if data.shape != (sensors.s, trajectory.n_columns):
        raise ValidationError(f'sensor data has shape {data.shape}, expected {(sensors.s, trajectory.n_columns)}')

    states = trajectory.states
    if base_state is not None:
        states = states - np.asarray(base_state, dtype=float).reshape(-1, 1)
    a_meas = trajectory.weight.gram(model.psi, states)
    N = a_meas.shape[1]

    f_vals = np.column_stack([reduced_rhs(a) for a in a_meas.T])
    w = f_vals - model.A @ a_meas
    v = data - sensors.C_bar @ a_meas
    Q_w = w @ w.T / N
    R_v = v @ v.T / N

    shrink_q = shrink_r = 0.0
    if N < Q_w.shape[0] or N < R_v.shape[0]:
        logger.warning('only %d samples for covariances of size %d and %d; shrinking toward the diagonal',
                       N, Q_w.shape[0], R_v.shape[0])
        Q_w, shrink_q = _shrink(Q_w, N)
        R_v, shrink_r = _shrink(R_v, N)

    regularized = False
    trace = np.trace(R_v)
    lift = 1.0e-12 * trace / sensors.s if trace > 0 else 1.0e-12
    if np.min(la.eigvalsh(R_v)) <= lift:
        R_v = R_v + lift * np.eye(sensors.s)
        regularized = True

    return NoiseModel(0.5 * (Q_w + Q_w.T), 0.5 * (R_v + R_v.T), N, max(shrink_q, shrink_r), regularized)


@dataclass
class KalmanResult:
    L: np.ndarray
    P: np.ndarray
    poles: np.ndarray


def kalman(A, C, Q_w, R_v) -> KalmanResult:
    """Stationary Kalman gain ``L = P C^T R_v^{-1}`` from the filter (dual) Riccati equation."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    Q_w = np.atleast_2d(np.asarray(Q_w, dtype=float))
    R_v = np.atleast_2d(np.asarray(R_v, dtype=float))
    check_detectable(A, C)
    P = solve_care(A.T, C.T, Q_w, R_v)
    L = la.solve(R_v, C @ P).T
    return KalmanResult(L, P, la.eigvals(A - L @ C))


def kalman_gain(model: ReducedModel, sensors: SensorMap, noise: NoiseModel) -> KalmanResult:
    result = kalman(model.A, sensors.C_bar, noise.Q_w, noise.R_v)
    logger.info('Kalman gain: observer spectral abscissa %.4f', float(np.max(result.poles.real)))
    return result


class Compensator(object):
    """
    Reduced-order compensator: gain ``K`` on the reduced state and, for
    output feedback, a Kalman observer
    ``a_hat' = A~ a_hat + B~ u + L (y - C_bar a_hat)``.
    """

    def __init__(self, model: ReducedModel, K: np.ndarray, L: np.ndarray = None, sensors: SensorMap = None):
        self.model = model
        self.K = np.atleast_2d(np.asarray(K, dtype=float))
        self.L = None if L is None else np.asarray(L, dtype=float).reshape(model.order, -1)
        self.sensors = sensors
        if (self.L is None) != (sensors is None):
            raise ValidationError('an observer needs both a gain L and a sensor map')

        controller = la.eigvals(model.A + model.B @ self.K)
        if np.max(controller.real) >= 0:
            raise StabilityError(f'A~ + B~K is not stable (abscissa {np.max(controller.real):.3e})')
        if self.L is not None:
            observer = la.eigvals(self.observer_matrix)
            if np.max(observer.real) >= 0:
                raise StabilityError(f'A~ - L C_bar is not stable (abscissa {np.max(observer.real):.3e})')

        self.a_hat = np.zeros(model.order)
        self._stepper = None

    def __repr__(self):
        kind = 'observer' if self.has_observer else 'full-state'
        return f'{self.__class__.__name__} ({kind}, order={self.model.order})'

    @property
    def has_observer(self) -> bool:
        return self.L is not None

    @property
    def observer_matrix(self) -> np.ndarray:
        return self.model.A - self.L @ self.sensors.C_bar

    def reset(self, dt: float = None):
        self.a_hat = np.zeros(self.model.order)
        if dt is not None and self.has_observer:
            # held (u, y) enter through [B~ L]
            op = LinearOperator.from_matrix(self.observer_matrix)
            self._stepper = Stepper(op, dt, B=np.hstack([self.model.B, self.L]))

    def control(self, a: np.ndarray) -> np.ndarray:
        return self.K @ a

    def update(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Advance the observer one step with input and measurement held over it."""
        if self._stepper is None:
            raise ValidationError('call reset(dt) before stepping the observer')
        self.a_hat = self._stepper.step(self.a_hat, np.concatenate([np.atleast_1d(u), np.atleast_1d(y)]))
        return self.a_hat


@dataclass
class TraceBundle:
    """Time series from :func:`closed_loop_simulate`."""
    times: np.ndarray
    energy: np.ndarray
    a: np.ndarray
    a_hat: np.ndarray
    u: np.ndarray
    y: np.ndarray
    mode: str
    turn_on: float
    status: str = 'ok'

    def to_frame(self) -> pd.DataFrame:
        frame = {'t': self.times, 'energy': self.energy}
        for name, block in (('a', self.a), ('a_hat', self.a_hat), ('u', self.u), ('y', self.y)):
            for i, row in enumerate(block):
                frame[f'{name}{i + 1}'] = row
        return pd.DataFrame(frame)


def input_energy(trace: TraceBundle) -> float:
    """``int |u|^2 dt`` by the trapezoid rule."""
    if trace.times.size < 2:
        return 0.0
    return float(trapezoid(np.sum(trace.u ** 2, axis=0), trace.times))


def closed_loop_simulate(plant: StateSpaceSystem, comp: Compensator, mode: str, x0: np.ndarray, dt: float,
                         horizon: float, base_state: np.ndarray = None, turn_on: float = 0.0,
                         record_every: int = 1, blowup: float = BLOWUP_FACTOR) -> TraceBundle:
    """
    Co-integrate the plant and the compensator.

    The plant is stepped by Crank-Nicolson (linear) or its own nonlinear
    stepper with the input held over each step; the reduced state of the
    perturbation ``x - x0`` is ``a = psi^T W (x - x0)``. Before ``turn_on`` the
    plant runs uncontrolled; from then on ``u = K a`` (``mode='full-state'``) or
    ``u = K a_hat`` with the observer started from zero (``mode='observer'``).

    Returns: TraceBundle (status ``'blow-up'`` if the perturbation norm exceeded
    ``blowup`` times its initial value)
    """
    if mode not in ('full-state', 'observer'):
        raise ValidationError(f'mode must be "full-state" or "observer", got "{mode}"')
    if mode == 'observer' and not comp.has_observer:
        raise ValidationError('observer mode needs a compensator with an observer')
    model = comp.model
    if model.psi is None:
        raise ValidationError('compensator model carries no adjoint modes')

    W = plant.weight
    base = np.zeros(plant.n) if base_state is None else np.asarray(base_state, dtype=float)
    x = np.array(x0, dtype=float)
    stepper = plant.stepper(dt)
    if hasattr(stepper, 'reset'):
        stepper.reset()
    comp.reset(dt)
    sensor_rows = comp.sensors.rows if comp.has_observer else []
    p = plant.p

    n_steps = int(round(horizon / dt))
    on_step = int(np.ceil(turn_on / dt - 1.0e-9))
    initial = W.norm(x - base)
    reference = initial if initial > 0 else 1.0

    times, energy, a_rec, a_hat_rec, u_rec, y_rec = [], [], [], [], [], []
    status = 'ok'
    for step in range(n_steps + 1):
        dx = x - base
        a = W.gram(model.psi, dx)
        y = plant.C[sensor_rows] @ dx
        active = step >= on_step
        if not active:
            u = np.zeros(p)
        elif mode == 'full-state':
            u = comp.control(a)
        else:
            u = comp.control(comp.a_hat)

        norm = W.norm(dx)
        if step % record_every == 0:
            times.append(step * dt)
            energy.append(norm)
            a_rec.append(a)
            a_hat_rec.append(comp.a_hat.copy())
            u_rec.append(u)
            y_rec.append(y)

        if norm > blowup * reference:
            status = 'blow-up'
            logger.warning('plant blew up at t=%.3f (norm %.3e, initial %.3e)', step * dt, norm, initial)
            break
        if step == n_steps:
            break

        if mode == 'observer' and active:
            comp.update(u, y)
        x = stepper.step(x, u)

    stack = lambda rows, k: np.array(rows).T if rows else np.zeros((k, 0))
    return TraceBundle(np.array(times), np.array(energy), stack(a_rec, model.order), stack(a_hat_rec, model.order),
                       stack(u_rec, p), stack(y_rec, len(sensor_rows)), mode, turn_on, status)


def raise_on_blowup(trace: TraceBundle) -> TraceBundle:
    if trace.status != 'ok':
        raise PlantBlowUpError(f'closed-loop simulation ended with status "{trace.status}" '
                               f'at t={trace.times[-1]:.3f}')
    return trace


def coupled_system_matrix(plant_A: np.ndarray, plant_B: np.ndarray, comp: Compensator, mode: str,
                          reduction: np.ndarray = None, sensor_matrix: np.ndarray = None) -> np.ndarray:
    """
    Dense closed-loop matrix of a linear plant with the compensator.

    ``full-state``: ``A + B K R`` with ``R`` the map from plant state to reduced
    state (``psi^T W``). ``observer``: the plant/observer block matrix with
    sensor readings ``y = S x``.
    """
    A = np.atleast_2d(np.asarray(plant_A, dtype=float))
    B = np.asarray(plant_B, dtype=float).reshape(A.shape[0], -1)
    if mode == 'full-state':
        if reduction is None:
            raise ValidationError('full-state closed loop needs the state-to-reduced map')
        return A + B @ comp.K @ reduction
    if mode == 'observer':
        if sensor_matrix is None or not comp.has_observer:
            raise ValidationError('observer closed loop needs a sensor matrix and an observer')
        model = comp.model
        top = np.hstack([A, B @ comp.K])
        bottom = np.hstack([comp.L @ sensor_matrix, model.A + model.B @ comp.K - comp.L @ comp.sensors.C_bar])
        return np.vstack([top, bottom])
    raise ValidationError(f'mode must be "full-state" or "observer", got "{mode}"')
