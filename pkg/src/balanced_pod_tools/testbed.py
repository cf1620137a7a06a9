"""
Desk-scale plants for the pipeline: random hyperbolic LTI systems with known
eigenstructure, and a one-dimensional two-field advection-diffusion system
with cubic saturation that loses stability through a supercritical Hopf
bifurcation.
"""
from __future__ import annotations
from dataclasses import dataclass, field, replace
import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

from .errors import ValidationError
from .linops import DENSE_SIZE_CAP, InnerProductWeight, LinearOperator, StateSpaceSystem
from .steady import FixedPointProblem, SemiImplicitStepper, SteadyBranch, continuation

logger = logging.getLogger(__name__)

KINDS = ('random-lti', 'hopf-pde')

# condition number of the random eigenvector matrix
EIGENVECTOR_CONDITION = 10.0


@dataclass
class TestbedSpec:
    """
    Plant description shared by the configuration file and every artifact.

    ``n``, ``n_u``, ``p``, ``q``, ``gaps`` and ``weighted`` describe a random
    LTI plant; the remaining fields describe the Hopf plant, whose state is the
    pair of fields ``(u, v)`` sampled at ``grid`` interior nodes.
    """
    kind: str = 'hopf-pde'
    n: int = 8
    n_u: int = 2
    p: int = 1
    q: int = 2
    gaps: Tuple[float, float] = (0.1, 0.2)
    weighted: bool = False
    grid: int = 64
    length: float = 6.0
    mu: float = 0.9
    damping: float = 0.0
    frequency: float = 1.0
    advection: float = 1.0
    diffusion: float = 1.0
    saturation: float = 1.0
    twist: float = 0.0
    forcing_amplitude: float = 0.05
    forcing_center: float = 2.0
    forcing_width: float = 0.5
    actuator_center: float = 1.0
    actuator_width: float = 0.25
    sensors: Optional[List[int]] = None
    seed: int = 0

    def validate(self) -> TestbedSpec:
        if self.kind not in KINDS:
            raise ValidationError(f'testbed kind must be one of {KINDS}, got "{self.kind}"')
        if self.kind == 'random-lti':
            if not 0 <= self.n_u < self.n:
                raise ValidationError(f'need 0 <= n_u < n, got n_u={self.n_u}, n={self.n}')
            if self.p < 1 or self.q < 1:
                raise ValidationError('random plants need at least one input and one output')
            if min(self.gaps) <= 0:
                raise ValidationError(f'spectral gaps must be positive, got {self.gaps}')
            outputs = self.q
        else:
            if not 32 <= self.grid <= 256:
                raise ValidationError(f'grid size must lie in [32, 256], got {self.grid}')
            if self.length <= 0 or self.diffusion <= 0:
                raise ValidationError('domain length and diffusion must be positive')
            if self.actuator_width <= 0 or self.forcing_width <= 0:
                raise ValidationError('Gaussian widths must be positive')
            if not 0.0 <= self.actuator_center <= self.length:
                raise ValidationError(f'actuator center {self.actuator_center} outside [0, {self.length}]')
            outputs = 2 * self.grid
        bad = [s for s in self.sensor_rows() if not 0 <= int(s) < outputs]
        if bad:
            raise ValidationError(f'sensor indices {bad} outside the output dimension {outputs}')
        return self

    def sensor_rows(self) -> List[int]:
        """Configured sensor rows, or two defaults: the first two outputs, or ``u`` at 60% and 75% of the domain."""
        if self.sensors is not None:
            return [int(s) for s in self.sensors]
        if self.kind == 'random-lti':
            return list(range(min(self.q, 2)))
        return [int(0.6 * self.grid), int(0.75 * self.grid)]


@dataclass
class RandomLti:
    """A random plant with the eigenstructure it was built from."""
    system: StateSpaceSystem
    eigenvalues: np.ndarray
    V: np.ndarray
    Lambda: np.ndarray
    right: np.ndarray
    left: np.ndarray

    @property
    def n_u(self) -> int:
        return self.right.shape[1]


def _real_blocks(rng: np.random.Generator, count: int, low: float, high: float) -> Tuple[np.ndarray, List[complex]]:
    """Real block-diagonal matrix of ``count`` eigenvalues with real parts in ``[low, high]``, pairs first."""
    Lambda = np.zeros((count, count))
    values = []
    i = 0
    while i < count:
        a = rng.uniform(low, high)
        if count - i >= 2 and (i == 0 or rng.uniform() < 0.5):
            b = rng.uniform(0.5, 2.0)
            Lambda[i:i + 2, i:i + 2] = [[a, b], [-b, a]]
            values += [complex(a, b), complex(a, -b)]
            i += 2
        else:
            Lambda[i, i] = a
            values.append(complex(a, 0.0))
            i += 1
    return Lambda, values


def random_lti(n: int, n_u: int, p: int = 1, q: int = 2, gaps: Tuple[float, float] = (0.1, 0.2), seed: int = 0,
               weighted: bool = False) -> RandomLti:
    """
    Random hyperbolic plant ``A = V Lambda V^{-1}`` with prescribed spectrum.

    Args:
        n: State dimension.
        n_u: Number of unstable eigenvalues; their real parts lie in ``[gaps[0], 1]``.
        p: Number of inputs.
        q: Number of outputs.
        gaps: Smallest distance of the unstable and the stable real parts from
            the imaginary axis; stable real parts lie in ``[-5, -gaps[1]]``.
        seed: Seed of the generator.
        weighted: Draw a random SPD state weight instead of the identity.

    Returns: RandomLti with the unstable right and left eigenspaces, the
        latter in the weighted geometry (eigenspace of ``A*``).
    """
    TestbedSpec(kind='random-lti', n=n, n_u=n_u, p=p, q=q, gaps=tuple(gaps), sensors=[]).validate()
    rng = np.random.default_rng(seed)
    gap_u, gap_s = gaps

    Lu, vals_u = _real_blocks(rng, n_u, gap_u, max(1.0, gap_u))
    Ls, vals_s = _real_blocks(rng, n - n_u, -5.0, -gap_s)
    Lambda = la.block_diag(Lu, Ls) if n_u else Ls

    Q1, _ = la.qr(rng.standard_normal((n, n)))
    Q2, _ = la.qr(rng.standard_normal((n, n)))
    V = Q1 @ np.diag(np.logspace(0.0, np.log10(EIGENVECTOR_CONDITION), n)) @ Q2
    V_inv = la.inv(V)
    A = V @ Lambda @ V_inv

    if weighted:
        Qw, _ = la.qr(rng.standard_normal((n, n)))
        weight = InnerProductWeight.from_matrix(Qw @ np.diag(rng.uniform(0.5, 2.0, n)) @ Qw.T)
    else:
        weight = InnerProductWeight.identity(n)

    B = rng.standard_normal((n, p))
    C = rng.standard_normal((q, n))
    system = StateSpaceSystem(LinearOperator.from_matrix(A, weight), B, C, weight=weight,
                              name=f'random-lti n={n} n_u={n_u} seed={seed}')

    # left eigenspace of A^T is spanned by rows of V^{-1}; W^{-1} maps it to the eigenspace of A*
    left = weight.solve(V_inv[:n_u].T) if n_u else np.zeros((n, 0))
    logger.debug('random plant: n=%d n_u=%d cond(V)=%.1f', n, n_u, np.linalg.cond(V))
    return RandomLti(system, np.array(vals_u + vals_s), V, Lambda, V[:, :n_u].copy(), left)


def _gaussian(x: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-((x - center) / width) ** 2)


class HopfPlant(object):
    """
    Two fields ``u, v`` on ``[0, length]`` with homogeneous Dirichlet ends::

        u' = (mu - d) u - omega v - U u_x + nu u_xx - kappa r^2 (u - beta v) + s(x) + b(x) w
        v' = (mu - d) v + omega u - U v_x + nu v_xx - kappa r^2 (v + beta u)

    with ``r^2 = u^2 + v^2``, central differences on ``grid`` interior nodes and
    the state stacked as ``x = [u; v]``. The weight is the nodal quadrature
    ``W = h I``; the output is the full state with the same weight, and the
    sensors read ``u`` at the configured nodes.
    """

    def __init__(self, spec: TestbedSpec = None):
        self.spec = (spec or TestbedSpec()).validate()
        if self.spec.kind != 'hopf-pde':
            raise ValidationError(f'HopfPlant needs a hopf-pde spec, got "{self.spec.kind}"')
        s = self.spec
        self.N = s.grid
        self.h = s.length / (s.grid + 1)
        self.nodes = self.h * np.arange(1, s.grid + 1)
        self.weight = InnerProductWeight.from_diagonal(np.full(2 * self.N, self.h))

        # -U d/dx + nu d2/dx2 on one field
        lower = s.advection / (2 * self.h) + s.diffusion / self.h ** 2
        upper = -s.advection / (2 * self.h) + s.diffusion / self.h ** 2
        self._transport = (np.diag(np.full(self.N, -2 * s.diffusion / self.h ** 2))
                           + np.diag(np.full(self.N - 1, lower), -1) + np.diag(np.full(self.N - 1, upper), 1))
        self._off = (lower, upper)

        eye = np.eye(self.N)
        growth = s.mu - s.damping
        self.L = np.block([[self._transport + growth * eye, -s.frequency * eye],
                           [s.frequency * eye, self._transport + growth * eye]])

        self.forcing = np.concatenate([s.forcing_amplitude * _gaussian(self.nodes, s.forcing_center, s.forcing_width),
                                       np.zeros(self.N)])
        self.B = np.concatenate([_gaussian(self.nodes, s.actuator_center, s.actuator_width),
                                 np.zeros(self.N)]).reshape(-1, 1)
        self.C = np.eye(2 * self.N)

    def __repr__(self):
        return f'{self.__class__.__name__} (grid={self.N}, mu={self.spec.mu})'

    @property
    def n(self) -> int:
        return 2 * self.N

    @property
    def sensors(self) -> List[int]:
        return self.spec.sensor_rows()

    def with_mu(self, mu: float) -> HopfPlant:
        return HopfPlant(replace(self.spec, mu=float(mu)))

    def _split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValidationError(f'state has length {x.shape[0]}, expected {self.n}')
        return x[:self.N], x[self.N:]

    def nonlinear_term(self, x: np.ndarray) -> np.ndarray:
        """Cubic saturation plus the steady forcing."""
        u, v = self._split(x)
        kappa, beta = self.spec.saturation, self.spec.twist
        r2 = u ** 2 + v ** 2
        return np.concatenate([-kappa * r2 * (u - beta * v), -kappa * r2 * (v + beta * u)]) + self.forcing

    def rhs(self, x: np.ndarray, u: np.ndarray = None) -> np.ndarray:
        f = self.L @ x + self.nonlinear_term(x)
        if u is not None:
            f = f + self.B @ np.atleast_1d(u)
        return f

    def _saturation_blocks(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        u, v = self._split(x)
        kappa, beta = self.spec.saturation, self.spec.twist
        r2 = u ** 2 + v ** 2
        return (-kappa * (2 * u * (u - beta * v) + r2), -kappa * (2 * v * (u - beta * v) - beta * r2),
                -kappa * (2 * u * (v + beta * u) + beta * r2), -kappa * (2 * v * (v + beta * u) + r2))

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Exact Jacobian of :meth:`rhs` at ``x``."""
        uu, uv, vu, vv = self._saturation_blocks(x)
        return self.L + np.block([[np.diag(uu), np.diag(uv)], [np.diag(vu), np.diag(vv)]])

    def jacobian_action(self, x: np.ndarray, w: np.ndarray, adjoint: bool = False) -> np.ndarray:
        """``J(x) w`` (or its ``W`` adjoint, which is the transpose since ``W = h I``) without forming ``J``."""
        uu, uv, vu, vv = self._saturation_blocks(x)
        a, b = self._split(w)
        if adjoint:
            return self.L.T @ w + np.concatenate([uu * a + vu * b, uv * a + vv * b])
        return self.L @ w + np.concatenate([uu * a + uv * b, vu * a + vv * b])

    def jacobian_operator(self, x: np.ndarray) -> LinearOperator:
        if self.n <= DENSE_SIZE_CAP:
            return LinearOperator.from_matrix(self.jacobian(x), self.weight)
        x = np.array(x, dtype=float)
        return LinearOperator.from_callbacks(self.n, lambda w: self.jacobian_action(x, w),
                                             lambda w: self.jacobian_action(x, w, adjoint=True), self.weight)

    def stepper(self, dt: float) -> SemiImplicitStepper:
        """Crank-Nicolson on the linear part, Adams-Bashforth on saturation, forcing and input."""
        return SemiImplicitStepper(self.L, self.nonlinear_term, dt, self.B)

    def linear_system(self, x_base: np.ndarray = None) -> StateSpaceSystem:
        """Linearization about ``x_base`` (the origin by default)."""
        x_base = np.zeros(self.n) if x_base is None else x_base
        return StateSpaceSystem(self.jacobian_operator(x_base), self.B, self.C, weight=self.weight,
                                output_weight=self.weight, name=f'hopf-pde linearization mu={self.spec.mu}')

    def nonlinear_system(self, x_base: np.ndarray = None) -> StateSpaceSystem:
        """The nonlinear plant; ``A`` is its linearization about ``x_base``."""
        system = self.linear_system(x_base)
        system.rhs = self.rhs
        system.nonlinear_stepper = self.stepper
        system.name = f'hopf-pde mu={self.spec.mu}'
        return system

    def fixed_point_problem(self, dt: float = 0.01, T: int = 50, **settings) -> FixedPointProblem:
        stepper = self.stepper(dt)
        return FixedPointProblem(stepper.flow, T=T, **settings)

    def energy(self, x: np.ndarray, base_state: np.ndarray = None) -> float:
        dx = np.asarray(x, dtype=float) if base_state is None else np.asarray(x, dtype=float) - base_state
        return self.weight.norm(dx)

    def critical_parameter(self) -> float:
        """
        Parameter at which the unforced origin loses stability.

        The transport operator is tridiagonal Toeplitz, so its eigenvalues are
        ``a + 2 sqrt(b c) cos(k pi / (N + 1))`` and the linearization at the
        origin has eigenvalues ``mu - d + lambda_k +/- i omega``.
        """
        lower, upper = self._off
        k = np.arange(1, self.N + 1)
        lam = (-2 * self.spec.diffusion / self.h ** 2
               + 2 * np.sqrt(complex(lower * upper)) * np.cos(k * np.pi / (self.N + 1)))
        return float(self.spec.damping - np.max(lam.real))


def hopf_pde(spec: TestbedSpec = None) -> Tuple[StateSpaceSystem, Callable[[np.ndarray], StateSpaceSystem]]:
    """The nonlinear Hopf plant (linearized about the origin) and its linearization factory."""
    plant = HopfPlant(spec)
    return plant.nonlinear_system(), plant.linear_system


@dataclass
class HopfScan:
    branch: SteadyBranch
    bracket: Optional[Tuple[float, float]]
    step: float


def hopf_scan(spec: TestbedSpec, mu_range: Sequence[float], step: float, dt: float = 0.01, T: int = 50,
              n_eigs: int = 4, **newton) -> HopfScan:
    """
    Follow the steady branch across ``mu_range`` and bracket the Hopf crossing.

    Each point is the Newton-GMRES steady state seeded by the previous one; the
    leading eigenvalues of the exact Jacobian there decide the bracket.
    A scan with no sign change is returned with ``bracket=None`` and logged.
    """
    base = HopfPlant(spec)
    mu_start, mu_stop = float(mu_range[0]), float(mu_range[1])
    branch = continuation(lambda mu: base.with_mu(mu).fixed_point_problem(dt, T, **newton), mu_start, mu_stop, step,
                          np.zeros(base.n), jacobian=lambda mu, x: base.with_mu(mu).jacobian(x), n_eigs=n_eigs)
    bracket = branch.critical_bracket()
    if bracket is None:
        logger.warning('no eigenvalue crossing between mu=%.4f and mu=%.4f', mu_start, mu_stop)
    else:
        logger.info('Hopf crossing bracketed in [%.4f, %.4f]', *bracket)
    return HopfScan(branch, bracket, float(step))


def build_testbed(spec: TestbedSpec):
    """The plant object named by ``spec.kind`` (``RandomLti`` or ``HopfPlant``)."""
    spec.validate()
    if spec.kind == 'random-lti':
        return random_lti(spec.n, spec.n_u, spec.p, spec.q, tuple(spec.gaps), spec.seed, spec.weighted)
    return HopfPlant(spec)
