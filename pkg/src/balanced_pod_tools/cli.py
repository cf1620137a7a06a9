"""
Command line driver: every pipeline stage as a ``bpod`` subcommand.

Stages read the artifacts of earlier stages from the output directory and
refuse to run when those are missing or were produced under another
configuration (unless ``--force``). Each stage writes a ``manifest.json``
whose hash heads every table it writes.
"""
from __future__ import annotations
import argparse
import logging
import os
from pathlib import Path
import sys
import time
from typing import List, Optional

import dask
from dask import delayed
import numpy as np
import pandas as pd
import scipy
import scipy.linalg as la

from .balpod import ReducedModel, assemble_rom, balance, balanced_truncation_unstable, hsv_table, rom_impulse_compare
from .config import Paths, PipelineConfig, config_hash, dump_config, load_config
from .control import (Compensator, closed_loop_simulate, coupled_system_matrix, estimate_noise, galerkin_rhs,
                      input_energy, kalman_gain, lqr_gain, lqr_gain_unstable_only, raise_on_blowup, sensor_map)
from .errors import ArtifactError, BalancedPodError, ConvergenceError, NumericalError, RankError, ValidationError
from .io import read_matrix, read_metadata, record_hash, write_matrix, write_metadata, write_table
from .linops import StateSpaceSystem, Stepper
from .oracle import (comparison_table, exact_bt_unstable, freq_domain_gramians, projected_gramian_equivalence_check,
                     zhou_gramians)
from .snapshots import (PODBasis, SnapshotMatrix, adjoint_response, energy_history, impulse_response,
                        output_projection, pod, sensor_reconstruction)
from .spectral import BiorthogonalPair, biorthonormalize, leading_eigenvalues, stable_projector, unstable_eigenspace
from .steady import FixedPointProblem, newton_gmres
from .testbed import HopfPlant, RandomLti, build_testbed, hopf_scan

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

# stage each subcommand depends on
UPSTREAM = {
    'steady': [],
    'eigs': ['steady'],
    'snapshots': ['eigs'],
    'rom': ['snapshots'],
    'oracle': [],
    'lqr': ['rom'],
    'lqg': ['lqr'],
    'simulate': ['lqr'],
    'bifurcation': [],
}

# configuration sections each stage's results depend on
_CHAIN = ('testbed', 'steady', 'plain_newton', 'spectral', 'seed', 'snapshots', 'model')
SECTIONS = {
    'steady': _CHAIN[:3],
    'eigs': _CHAIN[:5],
    'snapshots': _CHAIN,
    'rom': _CHAIN,
    'oracle': ('testbed', 'spectral', 'seed', 'snapshots', 'model', 'oracle'),
    'lqr': _CHAIN + ('control',),
    'lqg': _CHAIN + ('control',),
    'simulate': _CHAIN + ('control', 'simulate'),
    'bifurcation': ('testbed', 'steady', 'plain_newton', 'bifurcation'),
}

# subcommand name -> stage directory
STAGES = {'oracle-compare': 'oracle'}

# time over which a converged steady state is marched to show its instability
DEPARTURE_TIME = 100.0


class Workspace(object):
    """Configuration, output paths and upstream bookkeeping for one stage run."""

    def __init__(self, cfg: PipelineConfig, stage: str, force: bool = False):
        self.cfg = cfg
        self.stage = stage
        self.force = force
        self.paths = Paths(cfg.output_dir)
        self.paths.create_resources()
        self.config_hash = config_hash(cfg, SECTIONS[stage])
        self.testbed = build_testbed(cfg.testbed)
        upstream = list(UPSTREAM[stage])
        if stage == 'simulate' and cfg.simulate.mode == 'observer':
            upstream.append('lqg')
        self.upstream = {name: self.require(name) for name in upstream}
        self.start = time.perf_counter()
        self.hash = record_hash(self._record())

    def __repr__(self):
        return f'{self.__class__.__name__} ({self.stage} -> {self.paths.dir_out})'

    @property
    def dir(self) -> Path:
        return self.paths.stage(self.stage)

    @property
    def is_hopf(self) -> bool:
        return isinstance(self.testbed, HopfPlant)

    def require(self, stage: str) -> str:
        """Hash of an upstream manifest; raises :class:`ArtifactError` when missing or stale."""
        command = {v: k for k, v in STAGES.items()}.get(stage, stage)
        manifest = self.paths.manifest(stage)
        if not manifest.exists():
            raise ArtifactError(f'no {stage} artifacts in {self.paths.dir_out}; run "bpod {command}" first', stage)
        record = read_metadata(manifest)
        if record['config_hash'] != config_hash(self.cfg, SECTIONS[stage]):
            if not self.force:
                raise ArtifactError(f'{stage} artifacts were produced under another configuration; '
                                    f'rerun "bpod {command}" or pass --force', stage)
            logger.warning('using stale %s artifacts (--force)', stage)
        return record['hash']

    def _record(self) -> dict:
        from . import __version__
        return {
            'stage': self.stage,
            'config_hash': self.config_hash,
            'upstream': self.upstream,
            'seed': self.cfg.seed,
            'versions': {'balanced_pod_tools': __version__, 'numpy': np.__version__, 'scipy': scipy.__version__,
                         'pandas': pd.__version__, 'dask': dask.__version__},
        }

    def table(self, name: str, frame: pd.DataFrame) -> Path:
        return write_table(self.dir / name, frame, self.hash)

    def finish(self, **summary) -> Path:
        record = self._record()
        record['hash'] = self.hash
        record['summary'] = summary
        record['wall_time'] = time.perf_counter() - self.start
        dump_config(self.cfg, self.dir / 'config.yml')
        logger.info('%s finished in %.1f s', self.stage, record['wall_time'])
        return write_metadata(self.paths.manifest(self.stage), record)

    def compute(self, tasks: List) -> List:
        """Evaluate delayed work items on up to ``jobs`` threads, results in task order."""
        return list(dask.compute(*tasks, scheduler='threads', num_workers=self.cfg.jobs))

    # plant access

    def base_state(self) -> np.ndarray:
        path = self.paths.stage('steady') / 'state.txt'
        if not path.exists():
            raise ArtifactError('no steady state; run "bpod steady" first', 'steady')
        return read_matrix(path).ravel()

    def linear_system(self, base: np.ndarray = None) -> StateSpaceSystem:
        if isinstance(self.testbed, RandomLti):
            return self.testbed.system
        return self.testbed.linear_system(base)

    def plant(self, kind: str, base: np.ndarray) -> StateSpaceSystem:
        if kind == 'linear':
            return self.linear_system(base)
        if not self.is_hopf:
            raise ValidationError('a nonlinear plant needs the hopf-pde testbed')
        return self.testbed.nonlinear_system(base)

    def pair(self, weight) -> BiorthogonalPair:
        eigs = self.paths.stage('eigs')
        return BiorthogonalPair(read_matrix(eigs / 'phi_u.txt'), read_matrix(eigs / 'psi_u.txt'), weight)

    def model(self, weight) -> ReducedModel:
        return ReducedModel.load(self.paths.stage('rom') / 'model', weight)

    def perturbed_state(self, base: np.ndarray, weight, amplitude: float) -> np.ndarray:
        """``base`` plus a seeded random perturbation of ``W``-norm ``amplitude``."""
        rng = np.random.default_rng(self.cfg.seed)
        noise = rng.standard_normal(base.size)
        return base + amplitude * noise / weight.norm(noise)


def run_steady(ws: Workspace):
    """Newton-GMRES steady state, then a plain time march away from it."""
    cfg = ws.cfg.steady
    settings = dict(epsilon0=cfg.epsilon0, newton_tol=cfg.newton_tol, gmres_tol=cfg.gmres_tol, restart=cfg.restart,
                    gmres_max_iter=cfg.gmres_max_iter, max_newton=cfg.max_newton,
                    line_search=cfg.line_search and not ws.cfg.plain_newton, max_halvings=cfg.max_halvings)
    if ws.is_hopf:
        problem = ws.testbed.fixed_point_problem(cfg.dt, cfg.T, **settings)
        guess = np.zeros(ws.testbed.n)
    else:
        stepper = Stepper(ws.testbed.system.A, cfg.dt)
        problem = FixedPointProblem(lambda x, steps: stepper.advance(x, steps), T=cfg.T, **settings)
        guess = np.zeros(ws.testbed.system.n)

    x_star, report = newton_gmres(problem, guess)
    write_matrix(ws.dir / 'state.txt', x_star)
    ws.table('newton.csv', report.to_frame())

    summary = {'newton_iterations': report.iterations, 'residual': report.residuals[-1]}
    if ws.is_hopf:
        plant = ws.testbed
        stepper = plant.stepper(cfg.dt)
        x = x_star.copy()
        record = max(1, int(round(1.0 / cfg.dt)))
        times, energy = [0.0], [0.0]
        for step in range(1, int(round(DEPARTURE_TIME / cfg.dt)) + 1):
            x = stepper.step(x)
            if step % record == 0:
                times.append(step * cfg.dt)
                energy.append(plant.energy(x, x_star))
        ws.table('departure.csv', pd.DataFrame({'t': times, 'energy': energy}))
        summary['departure_energy'] = energy[-1]
    ws.finish(**summary)


def run_eigs(ws: Workspace):
    """Right and left unstable eigenspaces of the linearization, bi-orthonormalized."""
    cfg = ws.cfg.spectral
    system = ws.linear_system(ws.base_state())
    if system.A.is_dense:
        system.check_hyperbolic(cfg.hyperbolicity_tol)
        vals = leading_eigenvalues(system.A, min(system.n, 2 * cfg.k_max))
        ws.table('eigenvalues.csv', pd.DataFrame({'real': vals.real, 'imag': vals.imag}))

    kwargs = dict(k_max=cfg.k_max, dt=cfg.dt, settle_time=cfg.settle_time, tol=cfg.tol, cycle_time=cfg.cycle_time,
                  max_cycles=cfg.max_cycles, seed=ws.cfg.seed)
    right, left = ws.compute([delayed(unstable_eigenspace)(system, side, **kwargs) for side in ('right', 'left')])
    if right.n_unstable != left.n_unstable:
        raise RankError(f'right and left unstable eigenspaces differ in dimension '
                        f'({right.n_unstable} vs {left.n_unstable})', min(right.n_unstable, left.n_unstable))

    right.save(ws.dir)
    left.save(ws.dir)
    pair = biorthonormalize(right.basis, left.basis, system.weight)
    write_matrix(ws.dir / 'phi_u.txt', pair.phi)
    write_matrix(ws.dir / 'psi_u.txt', pair.psi)
    ws.table('ritz.csv', pd.DataFrame({'real': right.ritz_values.real, 'imag': right.ritz_values.imag,
                                       'residual': right.residuals}))
    ws.finish(n_unstable=pair.k, pairing_error=pair.pairing_error(), cycles=[right.cycles, left.cycles])


def run_snapshots(ws: Workspace):
    """Projected impulse responses, POD of their outputs and the adjoint runs."""
    cfg = ws.cfg.snapshots
    system = ws.linear_system(ws.base_state())
    projector = stable_projector(ws.pair(system.weight))

    direct = impulse_response(system, projector, cfg.dt, cfg.n_steps, cfg.spacing, cfg.project_every_step, cfg.scheme)
    outputs = direct.map(system.C, system.output_weight)

    m = ws.cfg.model.m
    basis = None
    if m is not None and m < system.q:
        basis = pod(outputs, m)
        ws.table('pod_energy.csv', basis.energy_report())
        orders = [k for k in (4, 10, 20) if k <= basis.m]
        if orders:
            ws.table('energy_history.csv', energy_history(outputs, basis, orders))
        sensors = ws.cfg.testbed.sensor_rows()
        ws.table('sensor_reconstruction.csv', sensor_reconstruction(outputs, basis, sensors))
        write_matrix(ws.dir / 'pod_modes.txt', basis.modes)
        write_matrix(ws.dir / 'pod_energies.txt', basis.energies)
    else:
        logger.info('keeping all %d outputs unprojected', system.q)
    projection = output_projection(system.C, basis, system.output_weight)

    adjoint = adjoint_response(system, projector, projection.adjoint_modes(system.weight), cfg.dt, cfg.n_steps,
                               cfg.spacing, cfg.project_every_step, cfg.scheme)
    direct.save(ws.dir / 'direct')
    adjoint.save(ws.dir / 'adjoint')
    ws.finish(direct=direct.digest, adjoint=adjoint.digest, m=projection.m,
              captured_fraction=None if basis is None else basis.captured_fraction)


def _projection(ws: Workspace, system: StateSpaceSystem):
    snaps = ws.paths.stage('snapshots')
    basis = None
    if (snaps / 'pod_modes.txt').exists():
        basis = PODBasis(read_matrix(snaps / 'pod_modes.txt'), read_matrix(snaps / 'pod_energies.txt').ravel(),
                         system.output_weight)
    return output_projection(system.C, basis, system.output_weight)


def run_rom(ws: Workspace):
    """Balance the snapshot sets and assemble the reduced model next to the unstable block."""
    cfg = ws.cfg
    system = ws.linear_system(ws.base_state())
    snaps = ws.paths.stage('snapshots')
    direct = SnapshotMatrix.load(snaps / 'direct', system.weight)
    adjoint = SnapshotMatrix.load(snaps / 'adjoint', system.weight)
    pair = ws.pair(system.weight)
    projection = _projection(ws, system)

    balancing = balance(direct, adjoint, cfg.model.r, cfg.model.tie_tol)
    provenance = {'direct': direct.digest, 'adjoint': adjoint.digest, 'upstream': ws.upstream}
    model = assemble_rom(system, pair, balancing.phi, balancing.psi, projection, balancing.hsvs, provenance)
    model.save(ws.dir / 'model')
    ws.table('hsv.csv', hsv_table(balancing, model, cfg.model.gramian_horizon))

    horizon = cfg.model.compare_horizon or cfg.snapshots.n_steps * cfg.snapshots.dt
    comparison = rom_impulse_compare(system, model, stable_projector(pair), projection, cfg.snapshots.dt, horizon,
                                     cfg.snapshots.spacing)
    ws.table('impulse_error.csv', comparison.report)
    ws.table('impulse_traces.csv', comparison.traces)
    ws.finish(n_u=model.n_u, r=model.r, leading_hsv=float(balancing.hsvs[0]) if balancing.hsvs.size else None)


def run_oracle(ws: Workspace):
    """Snapshot pipeline against exact balanced truncation on a dense plant."""
    cfg = ws.cfg
    # the Hopf plant is compared through its linearization about the origin
    system = ws.linear_system()
    if system.n > cfg.oracle.dense_cap:
        raise ValidationError(f'oracle comparison needs n <= {cfg.oracle.dense_cap}, plant has n={system.n}')
    A = system.A.to_dense(cfg.oracle.dense_cap)
    F = system.weight.factor_matrix
    # balanced truncation is coordinate free; the oracle works in coordinates F x
    A_f, B_f, C_f = F @ A @ la.inv(F), F @ system.B, system.output_weight.factor(system.C) @ la.inv(F)

    exact = exact_bt_unstable(A_f, B_f, C_f, r_s=cfg.model.r)
    sn = cfg.snapshots
    result = balanced_truncation_unstable(system, cfg.model.r, None, sn.dt, sn.n_steps, sn.spacing,
                                          cfg.spectral.k_max, cfg.spectral.tol, cfg.seed,
                                          project_every_step=sn.project_every_step)

    ours = result.balancing.hsvs
    theirs = exact.hsvs_s
    keep = theirs > 1.0e-6 * theirs[0] if theirs.size else np.zeros(0, dtype=bool)
    count = int(min(np.sum(keep), ours.size))
    unstable_ours = np.sort(la.eigvals(result.model.A_u).real)[::-1]
    unstable_exact = np.sort(la.eigvals(exact.decoupled.A_u).real)[::-1]
    table = comparison_table({'stable_hsv': ours[:count], 'unstable_eig_real': unstable_ours},
                             {'stable_hsv': theirs[:count], 'unstable_eig_real': unstable_exact})
    ws.table('comparison.csv', table)

    zhou_c, zhou_o = zhou_gramians(A_f, B_f, C_f)
    freq_c, freq_o = freq_domain_gramians(A_f, B_f, C_f, cfg.oracle.omega_max, cfg.oracle.n_quad, cfg.oracle.epsrel)
    ws.table('gramians.csv', pd.DataFrame([
        {'gramian': 'controllability', 'relative_difference': np.linalg.norm(zhou_c - freq_c) / np.linalg.norm(zhou_c)},
        {'gramian': 'observability', 'relative_difference': np.linalg.norm(zhou_o - freq_o) / np.linalg.norm(zhou_o)},
    ]))

    checks = ws.compute([delayed(projected_gramian_equivalence_check)(A_f, B_f, C_f, eps, cfg.seed)
                         for eps in cfg.oracle.psi_perturbations])
    ws.table('equivalence.csv', pd.DataFrame([
        {'psi_perturbation': c.psi_perturbation, 'controllability_relative': c.controllability_relative,
         'observability_relative': c.observability_relative} for c in checks]))
    worst = float(table['relative_error'].max()) if len(table) else 0.0
    ws.finish(max_relative_error=worst, n_u=exact.r_u)


def _reduction(model: ReducedModel, weight) -> np.ndarray:
    return model.psi.T @ weight.matrix


def run_lqr(ws: Workspace):
    """LQR gain on the reduced model, with the closed loop of the linear plant checked densely."""
    cfg = ws.cfg
    system = ws.linear_system(ws.base_state())
    model = ws.model(system.weight)
    if cfg.control.unstable_only:
        result = lqr_gain_unstable_only(model, c=cfg.control.c, output_weight=system.output_weight)
    else:
        result = lqr_gain(model, c=cfg.control.c, output_weight=system.output_weight)
    write_matrix(ws.dir / 'K.txt', result.K)
    write_matrix(ws.dir / 'P.txt', result.P)
    ws.table('poles.csv', pd.DataFrame({'real': result.poles.real, 'imag': result.poles.imag}))

    summary = {'model_abscissa': result.spectral_abscissa, **result.spillover}
    if system.A.is_dense:
        closed = coupled_system_matrix(system.A.matrix, system.B, Compensator(model, result.K), 'full-state',
                                       reduction=_reduction(model, system.weight))
        summary['plant_abscissa'] = float(np.max(la.eigvals(closed).real))
        if summary['plant_abscissa'] >= 0:
            logger.warning('reduced gain leaves the linear plant unstable (abscissa %.3e)', summary['plant_abscissa'])
    ws.finish(**summary)


def _representative_run(ws: Workspace, system: StateSpaceSystem, model: ReducedModel, K: np.ndarray,
                        base: np.ndarray):
    """
    Trajectory for the noise estimates: the uncontrolled limit cycle of the
    nonlinear plant (second half of the run), or the linear plant under the
    full-state gain.
    """
    cfg = ws.cfg
    dt = cfg.control.noise_dt
    every = cfg.control.noise_record_every
    n_steps = int(round(cfg.control.noise_run_time / dt))
    start = n_steps // 2 if system.is_nonlinear else 0
    reduction = _reduction(model, system.weight)

    stepper = system.stepper(dt)
    if hasattr(stepper, 'reset'):
        stepper.reset()
    x = ws.perturbed_state(base, system.weight, cfg.control.noise_perturbation)
    states, times = [], []
    for step in range(n_steps + 1):
        if step >= start and step % every == 0:
            states.append(x.copy())
            times.append(step * dt)
        u = None if system.is_nonlinear else K @ (reduction @ (x - base))
        x = stepper.step(x, u)
    return SnapshotMatrix.from_trajectory(np.column_stack(states), np.array(times), system.weight)


def run_lqg(ws: Workspace):
    """Sensor map, noise covariances from a representative run, and the Kalman gain."""
    cfg = ws.cfg
    base = ws.base_state()
    model = ws.model(ws.linear_system(base).weight)
    K = read_matrix(ws.paths.stage('lqr') / 'K.txt')
    system = ws.plant('nonlinear' if ws.is_hopf else 'linear', base)

    sensors = sensor_map(model, cfg.testbed.sensor_rows())
    ws.table('pbh_margins.csv', sensors.margin_table())

    trajectory = _representative_run(ws, system, model, K, base)
    readings = system.C[sensors.rows] @ (trajectory.states - base.reshape(-1, 1))
    rhs = system.rhs if system.is_nonlinear else (lambda x, u=None: system.A.apply(x))
    noise = estimate_noise(model, trajectory, galerkin_rhs(model, rhs, base, system.weight), sensors, readings, base)
    kalman = kalman_gain(model, sensors, noise)

    write_matrix(ws.dir / 'L.txt', kalman.L)
    write_matrix(ws.dir / 'Q_w.txt', noise.Q_w)
    write_matrix(ws.dir / 'R_v.txt', noise.R_v)
    ws.table('observer_poles.csv', pd.DataFrame({'real': kalman.poles.real, 'imag': kalman.poles.imag}))

    summary = {'sensors': sensors.rows, 'samples': noise.samples, 'shrinkage': noise.shrinkage,
               'regularized': noise.regularized, 'observer_abscissa': float(np.max(kalman.poles.real))}
    linear = ws.linear_system(base)
    if linear.A.is_dense:
        comp = Compensator(model, K, kalman.L, sensors)
        closed = coupled_system_matrix(linear.A.matrix, linear.B, comp, 'observer',
                                       sensor_matrix=linear.C[sensors.rows])
        summary['plant_abscissa'] = float(np.max(la.eigvals(closed).real))
    ws.finish(**summary)


def _simulate_one(plant: StateSpaceSystem, model: ReducedModel, K: np.ndarray, L: Optional[np.ndarray],
                  rows: List[int], mode: str, x0: np.ndarray, base: np.ndarray, turn_on: float, cfg):
    sensors = sensor_map(model, rows) if L is not None else None
    comp = Compensator(model, K, L, sensors)
    return closed_loop_simulate(plant, comp, mode, x0, cfg.dt, cfg.horizon, base, turn_on, cfg.record_every,
                                cfg.blowup)


def run_simulate(ws: Workspace):
    """Closed-loop runs, one per turn-on time."""
    cfg = ws.cfg.simulate
    base = ws.base_state()
    linear = ws.linear_system(base)
    model = ws.model(linear.weight)
    K = read_matrix(ws.paths.stage('lqr') / 'K.txt')
    L = None
    if cfg.mode == 'observer':
        L = read_matrix(ws.paths.stage('lqg') / 'L.txt')

    plant = ws.plant(cfg.plant, base)
    x0 = ws.perturbed_state(base, plant.weight, cfg.perturbation)
    rows = ws.cfg.testbed.sensor_rows()
    turn_on = sorted(set(float(t) for t in cfg.turn_on))
    # nonlinear plants carry stepper state, so every work item gets its own plant
    tasks = [delayed(_simulate_one)(ws.plant(cfg.plant, base), model, K, L, rows, cfg.mode, x0, base, t, cfg)
             for t in turn_on]
    traces = ws.compute(tasks)

    rows_summary = []
    for t, trace in zip(turn_on, traces):
        ws.table(f'trace_{cfg.mode}_{cfg.plant}_t{t:g}.csv', trace.to_frame())
        rows_summary.append({'turn_on': t, 'status': trace.status, 'final_energy': trace.energy[-1],
                             'peak_energy': float(np.max(trace.energy)), 'input_energy': input_energy(trace)})
    ws.table(f'summary_{cfg.mode}_{cfg.plant}.csv', pd.DataFrame(rows_summary))
    ws.finish(mode=cfg.mode, plant=cfg.plant, statuses=[r['status'] for r in rows_summary])
    for trace in traces:
        raise_on_blowup(trace)


def run_bifurcation(ws: Workspace):
    """Steady branch across the parameter range and the bracket of the Hopf crossing."""
    if not ws.is_hopf:
        raise ValidationError('bifurcation scans need the hopf-pde testbed')
    cfg, st = ws.cfg.bifurcation, ws.cfg.steady
    scan = hopf_scan(ws.cfg.testbed, (cfg.mu_start, cfg.mu_stop), cfg.step, st.dt, st.T, cfg.n_eigs,
                     newton_tol=st.newton_tol, gmres_tol=st.gmres_tol,
                     line_search=st.line_search and not ws.cfg.plain_newton)
    files = []
    for i, point in enumerate(scan.branch.points):
        name = f'state_{i:03d}.txt'
        write_matrix(ws.dir / name, point.state)
        files.append(name)
    ws.table('branch.csv', scan.branch.to_frame(files))
    ws.finish(bracket=scan.bracket, terminated=scan.branch.terminated,
              unforced_critical=ws.testbed.critical_parameter())
    if scan.bracket is None:
        raise ConvergenceError(f'no Hopf crossing between mu={cfg.mu_start} and mu={cfg.mu_stop}')


COMMANDS = {
    'steady': run_steady,
    'eigs': run_eigs,
    'snapshots': run_snapshots,
    'rom': run_rom,
    'oracle-compare': run_oracle,
    'lqr': run_lqr,
    'lqg': run_lqg,
    'simulate': run_simulate,
    'bifurcation': run_bifurcation,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='bpod', description='Balanced POD of unstable systems and '
                                                              'reduced-order compensator design.')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML configuration file (default: $BPOD_CONFIG or built-in defaults)')
    common.add_argument('--out', help='output directory (overrides output_dir)')
    common.add_argument('--seed', type=int, help='random seed (overrides seed)')
    common.add_argument('--jobs', type=int, help='parallel work items')
    common.add_argument('--force', action='store_true', help='accept upstream artifacts from another configuration')
    common.add_argument('--strict-paper', '--plain-newton', dest='plain_newton', action='store_true',
                        help='disable the Newton line search safeguard')
    common.add_argument('--log-level', default=os.getenv('BPOD_LOG_LEVEL', 'INFO'),
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])

    sub = parser.add_subparsers(dest='command', required=True)
    for name, fn in COMMANDS.items():
        cmd = sub.add_parser(name, parents=[common], help=fn.__doc__.strip().splitlines()[0])
        if name == 'simulate':
            cmd.add_argument('--mode', choices=['full-state', 'observer'])
            cmd.add_argument('--plant', choices=['linear', 'nonlinear'])
            cmd.add_argument('--turn-on', type=float, action='append', dest='turn_on',
                             help='control turn-on time (repeatable)')
    return parser


def run_config(args: argparse.Namespace) -> PipelineConfig:
    """Configuration of a run: the file (or defaults) with the command-line overrides on top."""
    overrides = {'output_dir': args.out, 'seed': args.seed, 'jobs': args.jobs,
                 'plain_newton': True if args.plain_newton else None}
    cfg = load_config(args.config, overrides)
    if args.command == 'simulate':
        for key in ('mode', 'plant', 'turn_on'):
            if getattr(args, key) is not None:
                setattr(cfg.simulate, key, getattr(args, key))
        cfg.validate()
    return cfg


def main(argv: List[str] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        cfg = run_config(args)
        ws = Workspace(cfg, STAGES.get(args.command, args.command), force=args.force)
        COMMANDS[args.command](ws)
    except (ValidationError, ArtifactError) as err:
        logger.error('%s', err)
        return EXIT_VALIDATION
    except NumericalError as err:
        logger.error('%s: %s', err.__class__.__name__, err)
        return EXIT_NUMERICAL
    except BalancedPodError as err:
        logger.error('%s', err)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
