"""
Exact balanced truncation of small dense systems, used to validate the
snapshot pipeline.

* :func:`exact_bt_stable`: square-root balanced truncation of a stable system.
* :func:`decouple` / :func:`exact_bt_unstable`: split a hyperbolic system into
  unstable and stable parts by an ordered real Schur form plus a Sylvester solve,
  then balance ``(-A_u, B_u, C_u)`` and ``(A_s, B_s, C_s)`` separately.
* :func:`freq_domain_gramians`: Gramians of a hyperbolic system from the
  resolvent integral over all frequencies.
* :func:`projected_gramian_equivalence_check`: Gramians of the system
  restricted by the stable projector against the stable parts of the
  decoupled Gramians.

All oracles work in the Euclidean inner product.
"""
from __future__ import annotations
from dataclasses import dataclass
import logging
from typing import Dict

import numpy as np
import pandas as pd
import scipy.linalg as la
from scipy.integrate import quad_vec

from .errors import ConvergenceError, HyperbolicityError, ValidationError
from .linops import DENSE_SIZE_CAP, eig_dense, solve_lyapunov
from .spectral import biorthonormalize

logger = logging.getLogger(__name__)


def _dense_system(A, B, C, cap: int = DENSE_SIZE_CAP):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValidationError(f'A must be square, got {A.shape}')
    n = A.shape[0]
    if n > cap:
        raise ValidationError(f'oracle paths are capped at n={cap}, got {n}')
    B = np.asarray(B, dtype=float).reshape(n, -1)
    C = np.asarray(C, dtype=float).reshape(-1, n)
    for name, arr in (('A', A), ('B', B), ('C', C)):
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f'{name} contains NaN or Inf entries')
    return A, B, C


@dataclass
class DecoupledRealization:
    """
    ``A = [T_u T_s] blockdiag(A_u, A_s) [S_u S_s]^T`` with ``S^T T = I``;
    ``B_u = S_u^T B``, ``C_u = C T_u`` and likewise for the stable part.
    """
    A_u: np.ndarray
    B_u: np.ndarray
    C_u: np.ndarray
    A_s: np.ndarray
    B_s: np.ndarray
    C_s: np.ndarray
    T_u: np.ndarray
    T_s: np.ndarray
    S_u: np.ndarray
    S_s: np.ndarray

    @property
    def n_u(self) -> int:
        return self.A_u.shape[0]

    @property
    def transform(self) -> np.ndarray:
        return np.hstack([self.T_u, self.T_s])

    @property
    def inverse_transform(self) -> np.ndarray:
        return np.hstack([self.S_u, self.S_s]).T

    def reconstruct(self) -> np.ndarray:
        return self.transform @ la.block_diag(self.A_u, self.A_s) @ self.inverse_transform


def decouple(A, B, C, tol: float = 1.0e-8) -> DecoupledRealization:
    """
    Decouple a hyperbolic system into its unstable and stable parts.

    Ordered real Schur form ``A = Q [[T11, T12], [0, T22]] Q^T`` (unstable
    block first), then ``T11 Y - Y T22 = -T12`` removes the coupling:
    ``T_u = Q1``, ``T_s = Q1 Y + Q2``, ``S_u^T = Q1^T - Y Q2^T``, ``S_s^T = Q2^T``.
    Schur vectors are sign-normalized so their largest entry is positive.
    """
    A, B, C = _dense_system(A, B, C)
    n = A.shape[0]

    vals = la.eigvals(A)
    near = vals[np.abs(vals.real) <= tol]
    if near.size:
        raise HyperbolicityError(f'eigenvalue {near[0]:.3e} is within {tol:g} of the imaginary axis')

    _, Q, n_u = la.schur(A, output='real', sort='rhp')
    signs = np.sign(Q[np.argmax(np.abs(Q), axis=0), np.arange(n)])
    signs[signs == 0] = 1.0
    Q = Q * signs
    T = Q.T @ A @ Q

    Q1, Q2 = Q[:, :n_u], Q[:, n_u:]
    T11, T12, T22 = T[:n_u, :n_u], T[:n_u, n_u:], T[n_u:, n_u:]
    Y = la.solve_sylvester(T11, -T22, -T12) if n_u and n_u < n else np.zeros((n_u, n - n_u))

    T_u, T_s = Q1, Q1 @ Y + Q2
    S_u, S_s = (Q1.T - Y @ Q2.T).T, Q2
    return DecoupledRealization(
        A_u=T11, B_u=S_u.T @ B, C_u=C @ T_u,
        A_s=T22, B_s=S_s.T @ B, C_s=C @ T_s,
        T_u=T_u, T_s=T_s, S_u=S_u, S_s=S_s,
    )


def _resolvent_gramian(A: np.ndarray, B: np.ndarray, omega_max: float, limit: int, epsrel: float):
    """``(1/2pi) int (iw - A)^{-1} B B^T (iw - A)^{-H} dw`` over the real line."""
    n = A.shape[0]
    M = B @ B.T
    eye = np.eye(n)

    def integrand(omega):
        R = la.solve(1j * omega * eye - A, B)
        return (R @ R.conj().T).real

    # the integrand at -w is the conjugate of the one at w
    body, err, info = quad_vec(integrand, 0.0, omega_max, epsrel=epsrel, epsabs=0.0, limit=limit, full_output=True)
    if not info.success:
        raise ConvergenceError(f'frequency quadrature did not converge: achieved error {err:.2e} '
                               f'after {info.intervals.shape[0]} intervals', {'error': err})

    tail = M / omega_max + (A @ M @ A.T - A @ A @ M - M @ A.T @ A.T) / (3.0 * omega_max ** 3)
    G = (2.0 * body) / (2.0 * np.pi) + tail / np.pi
    return 0.5 * (G + G.T), err


def freq_domain_gramians(A, B, C, omega_max: float = None, n_quad: int = 10000, epsrel: float = 1.0e-10):
    """
    Controllability and observability Gramians from their frequency-domain
    definitions; valid for any hyperbolic ``A``.

    The resolvent integrals are evaluated by adaptive quadrature on
    ``[0, omega_max]`` (the integrand is even up to conjugation) plus an
    analytic tail ``(1/pi) [M / w + (A M A^T - A^2 M - M A^T^2) / (3 w^3)]``.

    Args:
        omega_max: Quadrature cutoff; defaults to ``1e3 max|lambda|``.
        n_quad: Largest number of adaptive subintervals.
        epsrel: Relative quadrature tolerance.

    Returns: (W_c, W_o)
    """
    A, B, C = _dense_system(A, B, C)
    vals = la.eigvals(A)
    if np.any(np.abs(vals.real) <= 1.0e-8):
        raise HyperbolicityError('frequency-domain Gramians need an A without imaginary-axis eigenvalues')
    if omega_max is None:
        omega_max = 1.0e3 * max(np.max(np.abs(vals)), 1.0)

    Wc, err_c = _resolvent_gramian(A, B, omega_max, n_quad, epsrel)
    Wo, err_o = _resolvent_gramian(A.T, C.T, omega_max, n_quad, epsrel)
    logger.debug('frequency Gramians: cutoff %.3e, quadrature errors %.2e / %.2e', omega_max, err_c, err_o)
    return Wc, Wo


def zhou_gramians(A, B, C):
    """General Gramians ``T blockdiag(W^u, W^s) T^T`` and ``S blockdiag(W^u, W^s) S^T`` of a hyperbolic system."""
    dec = decouple(A, B, C)
    Wc_u = solve_lyapunov(-dec.A_u, dec.B_u @ dec.B_u.T)
    Wc_s = solve_lyapunov(dec.A_s, dec.B_s @ dec.B_s.T)
    Wo_u = solve_lyapunov(-dec.A_u.T, dec.C_u.T @ dec.C_u)
    Wo_s = solve_lyapunov(dec.A_s.T, dec.C_s.T @ dec.C_s)
    T, S = dec.transform, dec.inverse_transform.T
    return T @ la.block_diag(Wc_u, Wc_s) @ T.T, S @ la.block_diag(Wo_u, Wo_s) @ S.T


def _psd_factor(G: np.ndarray) -> np.ndarray:
    """``L`` with ``G = L L^T`` from a symmetric eigen-decomposition (negative round-off clipped)."""
    w, V = la.eigh(0.5 * (G + G.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass
class BalancedRealization:
    """Square-root balancing of a stable system: ``A_r = T_inv A T`` etc."""
    hsvs: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    T: np.ndarray
    T_inv: np.ndarray

    @property
    def r(self) -> int:
        return self.A.shape[0]


def exact_bt_stable(A, B, C, r: int = None, rank_tol: float = 1.0e-12) -> BalancedRealization:
    """
    Balanced truncation of a stable system by the square-root method.

    Gramian factors come from symmetric eigen-decompositions; the Hankel
    singular values are the singular values of ``L_o^T L_c``. The order is
    limited to the numerical rank (``sigma > rank_tol sigma_1``).
    """
    A, B, C = _dense_system(A, B, C)
    Lc = _psd_factor(solve_lyapunov(A, B @ B.T))
    Lo = _psd_factor(solve_lyapunov(A.T, C.T @ C))

    U, s, Vt = la.svd(Lo.T @ Lc)
    rank = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    if r is None:
        r = rank
    elif r > rank:
        logger.warning('requested order %d exceeds the numerical rank %d; truncating to %d', r, rank, rank)
        r = rank

    scale = 1.0 / np.sqrt(s[:r])
    T = Lc @ Vt[:r].T * scale
    T_inv = (U[:, :r] * scale).T @ Lo.T
    return BalancedRealization(s, T_inv @ A @ T, T_inv @ B, C @ T, T, T_inv)


@dataclass
class UnstableBalancedRealization:
    """Separately balanced unstable and stable parts of a hyperbolic system."""
    hsvs_u: np.ndarray
    hsvs_s: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    r_u: int
    r_s: int
    decoupled: DecoupledRealization

    @property
    def hsvs(self) -> np.ndarray:
        """Generalized Hankel singular values, unstable block first."""
        return np.concatenate([self.hsvs_u, self.hsvs_s])


def _empty_balanced(p: int, q: int) -> BalancedRealization:
    return BalancedRealization(np.zeros(0), np.zeros((0, 0)), np.zeros((0, p)), np.zeros((q, 0)),
                               np.zeros((0, 0)), np.zeros((0, 0)))


def exact_bt_unstable(A, B, C, r_u: int = None, r_s: int = None) -> UnstableBalancedRealization:
    """
    Balanced truncation of a hyperbolic system: decouple, then balance
    ``(-A_u, B_u, C_u)`` and ``(A_s, B_s, C_s)`` separately.

    ``r_u`` defaults to the full unstable dimension so no unstable mode is
    truncated; a smaller ``r_u`` exposes truncation of the unstable block too.
    """
    A, B, C = _dense_system(A, B, C)
    dec = decouple(A, B, C)
    p, q = B.shape[1], C.shape[0]

    if dec.n_u:
        bal_u = exact_bt_stable(-dec.A_u, dec.B_u, dec.C_u, dec.n_u if r_u is None else r_u)
        bal_u.A = -bal_u.A
    else:
        bal_u = _empty_balanced(p, q)
    bal_s = exact_bt_stable(dec.A_s, dec.B_s, dec.C_s, r_s) if dec.A_s.size else _empty_balanced(p, q)

    phi = np.hstack([dec.T_u @ bal_u.T, dec.T_s @ bal_s.T])
    psi = np.hstack([dec.S_u @ bal_u.T_inv.T, dec.S_s @ bal_s.T_inv.T])
    return UnstableBalancedRealization(
        hsvs_u=bal_u.hsvs, hsvs_s=bal_s.hsvs,
        A=la.block_diag(bal_u.A, bal_s.A), B=np.vstack([bal_u.B, bal_s.B]), C=np.hstack([bal_u.C, bal_s.C]),
        phi=phi, psi=psi, r_u=bal_u.r, r_s=bal_s.r, decoupled=dec,
    )


@dataclass
class EquivalenceReport:
    """Discrepancies between projected-system Gramians and stable parts of the decoupled Gramians."""
    controllability: float
    observability: float
    controllability_relative: float
    observability_relative: float
    n_u: int
    psi_perturbation: float

    @property
    def max_relative(self) -> float:
        return max(self.controllability_relative, self.observability_relative)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {'gramian': 'controllability', 'discrepancy': self.controllability,
             'relative': self.controllability_relative},
            {'gramian': 'observability', 'discrepancy': self.observability,
             'relative': self.observability_relative},
        ])


def _restricted_gramian(A: np.ndarray, P: np.ndarray, B: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Gramian of ``x' = P A x``, ``x(0) = P B`` on ``span(basis)`` (orthonormal), embedded back in ``R^n``."""
    if basis.shape[1] == 0:
        return np.zeros((A.shape[0], A.shape[0]))
    A_r = basis.T @ P @ A @ basis
    B_r = basis.T @ P @ B
    return basis @ solve_lyapunov(A_r, B_r @ B_r.T) @ basis.T


def projected_gramian_equivalence_check(A, B, C, psi_perturbation: float = 0.0, seed: int = 0) -> EquivalenceReport:
    """
    Compare the Gramians of the stable-projected system with ``T_s W_c^s T_s^T``
    and ``S_s W_o^s S_s^T`` from the decoupled realization.

    The projector is built from exact eigenvectors; ``psi_perturbation`` adds
    a random relative perturbation to the left basis before it is
    bi-orthonormalized, emulating an inexact adjoint. Projected Gramians are
    solved on orthonormal coordinates of ``range(P_s)`` (and of ``range(P_s^T)``).
    """
    A, B, C = _dense_system(A, B, C)
    dec = decouple(A, B, C)
    n_u = dec.n_u

    eig = eig_dense(A)
    phi_u, psi_u = eig.right[:, :n_u], eig.left[:, :n_u]
    if psi_perturbation and n_u:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(psi_u.shape)
        psi_u = psi_u + psi_perturbation * np.linalg.norm(psi_u) / np.linalg.norm(noise) * noise
    pair = biorthonormalize(phi_u, psi_u)
    P = np.eye(A.shape[0]) - pair.phi @ pair.psi.T

    Wc_proj = _restricted_gramian(A, P, B, la.null_space(pair.psi.T) if n_u else np.eye(A.shape[0]))
    Wo_proj = _restricted_gramian(A.T, P.T, C.T, la.null_space(pair.phi.T) if n_u else np.eye(A.shape[0]))

    Wc_ref = dec.T_s @ solve_lyapunov(dec.A_s, dec.B_s @ dec.B_s.T) @ dec.T_s.T
    Wo_ref = dec.S_s @ solve_lyapunov(dec.A_s.T, dec.C_s.T @ dec.C_s) @ dec.S_s.T

    dc = float(np.linalg.norm(Wc_proj - Wc_ref))
    do = float(np.linalg.norm(Wo_proj - Wo_ref))
    return EquivalenceReport(
        controllability=dc,
        observability=do,
        controllability_relative=dc / max(np.linalg.norm(Wc_ref), np.finfo(float).tiny),
        observability_relative=do / max(np.linalg.norm(Wo_ref), np.finfo(float).tiny),
        n_u=n_u,
        psi_perturbation=psi_perturbation,
    )


def comparison_table(pipeline: Dict[str, np.ndarray], oracle: Dict[str, np.ndarray]) -> pd.DataFrame:
    """
    Row per compared quantity: name, pipeline value, oracle value and relative error.
    Array quantities are expanded element-wise as ``name_1``, ``name_2``, ...
    """
    rows = []
    for name in pipeline:
        ours = np.atleast_1d(np.asarray(pipeline[name], dtype=float)).ravel()
        ref = np.atleast_1d(np.asarray(oracle[name], dtype=float)).ravel()
        count = min(ours.size, ref.size)
        for i in range(count):
            label = name if ours.size == 1 and ref.size == 1 else f'{name}_{i + 1}'
            denom = abs(ref[i]) if ref[i] != 0 else 1.0
            rows.append({'quantity': label, 'pipeline': ours[i], 'oracle': ref[i],
                         'relative_error': abs(ours[i] - ref[i]) / denom})
    return pd.DataFrame(rows, columns=['quantity', 'pipeline', 'oracle', 'relative_error'])
