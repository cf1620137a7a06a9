"""
Structured pipeline configuration.

The configuration is one YAML file whose layout mirrors :class:`PipelineConfig`;
``config/settings.yml`` carries every default and doubles as the schema
document. Optional environment overrides are read from a ``.env`` file.
"""
from __future__ import annotations
from dataclasses import asdict, dataclass, field, fields, is_dataclass
import logging
import os
from pathlib import Path
from typing import List, Optional, Sequence, Union

from dotenv import find_dotenv, load_dotenv
import yaml

from .errors import ValidationError
from .io import record_hash
from .linops import DENSE_SIZE_CAP, SCHEMES
from .testbed import TestbedSpec

# load the .env into the namespace
load_dotenv(find_dotenv())

logger = logging.getLogger(__name__)

# keys that never change results and so stay out of the configuration hash
_UNHASHED = ('output_dir', 'jobs')


@dataclass
class SteadyConfig:
    dt: float = 0.01
    T: int = 50
    epsilon0: float = 1.4901161193847656e-08
    newton_tol: float = 1.0e-10
    gmres_tol: float = 1.0e-6
    restart: int = 50
    gmres_max_iter: int = 500
    max_newton: int = 50
    line_search: bool = True
    max_halvings: int = 8


@dataclass
class SpectralConfig:
    k_max: int = 10
    dt: float = 0.01
    settle_time: Optional[float] = None
    tol: float = 1.0e-8
    cycle_time: float = 1.0
    max_cycles: int = 2000
    hyperbolicity_tol: float = 1.0e-8


@dataclass
class SnapshotConfig:
    dt: float = 0.01
    n_steps: int = 9950
    spacing: int = 50
    n_snapshots: int = 200
    project_every_step: bool = True
    scheme: str = 'crank-nicolson'


@dataclass
class ModelConfig:
    m: Optional[int] = 20
    r: int = 10
    tie_tol: float = 1.0e-6
    gramian_horizon: Optional[float] = None
    compare_horizon: Optional[float] = None


@dataclass
class ControlConfig:
    c: float = 1.0e5
    unstable_only: bool = False
    noise_run_time: float = 100.0
    noise_dt: float = 0.01
    noise_record_every: int = 10
    noise_perturbation: float = 1.0e-3


@dataclass
class SimulateConfig:
    mode: str = 'full-state'
    plant: str = 'nonlinear'
    turn_on: List[float] = field(default_factory=lambda: [170.0, 180.0, 210.0])
    horizon: float = 400.0
    dt: float = 0.01
    record_every: int = 10
    perturbation: float = 1.0e-3
    blowup: float = 1.0e6


@dataclass
class BifurcationConfig:
    mu_start: float = 0.3
    mu_stop: float = 0.8
    step: float = 0.05
    n_eigs: int = 4


@dataclass
class OracleConfig:
    dense_cap: int = DENSE_SIZE_CAP
    omega_max: Optional[float] = None
    n_quad: int = 10000
    epsrel: float = 1.0e-10
    psi_perturbations: List[float] = field(default_factory=lambda: [0.0, 1.0e-6, 1.0e-4, 1.0e-2])


@dataclass
class PipelineConfig:
    testbed: TestbedSpec = field(default_factory=TestbedSpec)
    steady: SteadyConfig = field(default_factory=SteadyConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    snapshots: SnapshotConfig = field(default_factory=SnapshotConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    bifurcation: BifurcationConfig = field(default_factory=BifurcationConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    seed: int = 0
    output_dir: str = 'output'
    jobs: int = 1
    plain_newton: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> PipelineConfig:
        """Range-check every field; raises :class:`ValidationError` naming the offending key."""
        self.testbed.validate()

        def require(ok: bool, key: str, value):
            if not ok:
                raise ValidationError(f'configuration value {key}={value!r} is out of range')

        def tolerance(key: str, value: float):
            require(0.0 < value < 1.0, key, value)

        st, sp, sn = self.steady, self.spectral, self.snapshots
        require(st.dt > 0, 'steady.dt', st.dt)
        require(st.T >= 1, 'steady.T', st.T)
        require(st.epsilon0 > 0, 'steady.epsilon0', st.epsilon0)
        tolerance('steady.newton_tol', st.newton_tol)
        tolerance('steady.gmres_tol', st.gmres_tol)
        require(st.restart >= 1, 'steady.restart', st.restart)
        require(st.max_newton >= 1, 'steady.max_newton', st.max_newton)

        require(sp.k_max >= 1, 'spectral.k_max', sp.k_max)
        require(sp.dt > 0, 'spectral.dt', sp.dt)
        tolerance('spectral.tol', sp.tol)
        tolerance('spectral.hyperbolicity_tol', sp.hyperbolicity_tol)
        require(sp.settle_time is None or sp.settle_time >= 0, 'spectral.settle_time', sp.settle_time)

        require(sn.dt > 0, 'snapshots.dt', sn.dt)
        require(sn.spacing >= 1, 'snapshots.spacing', sn.spacing)
        require(sn.n_snapshots >= 2, 'snapshots.n_snapshots', sn.n_snapshots)
        require(sn.n_steps == (sn.n_snapshots - 1) * sn.spacing, 'snapshots.n_steps', sn.n_steps)
        require(sn.scheme in SCHEMES, 'snapshots.scheme', sn.scheme)

        require(self.model.m is None or self.model.m >= 1, 'model.m', self.model.m)
        require(self.model.r >= 1, 'model.r', self.model.r)
        require(self.control.c > 0, 'control.c', self.control.c)
        require(self.control.noise_record_every >= 1, 'control.noise_record_every', self.control.noise_record_every)
        require(self.control.noise_dt > 0, 'control.noise_dt', self.control.noise_dt)

        sim = self.simulate
        require(sim.mode in ('full-state', 'observer'), 'simulate.mode', sim.mode)
        require(sim.plant in ('linear', 'nonlinear'), 'simulate.plant', sim.plant)
        require(sim.dt > 0 and sim.horizon > 0, 'simulate.horizon', sim.horizon)
        require(all(0 <= t <= sim.horizon for t in sim.turn_on), 'simulate.turn_on', sim.turn_on)
        require(sim.record_every >= 1, 'simulate.record_every', sim.record_every)

        bif = self.bifurcation
        require(bif.step != 0 and (bif.mu_stop - bif.mu_start) * bif.step > 0, 'bifurcation.step', bif.step)

        require(self.oracle.dense_cap >= 1, 'oracle.dense_cap', self.oracle.dense_cap)
        require(self.jobs >= 1, 'jobs', self.jobs)
        return self


def _build(cls, data: dict, prefix: str = ''):
    """Merge a mapping over the defaults of dataclass ``cls``, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValidationError(f'configuration section "{prefix or "root"}" must be a mapping')
    instance = cls()
    known = {f.name: f for f in fields(cls)}
    for key, value in data.items():
        dotted = f'{prefix}{key}'
        if key not in known:
            raise ValidationError(f'unknown configuration key "{dotted}"')
        default = getattr(instance, key)
        if is_dataclass(default):
            value = _build(type(default), value, f'{dotted}.')
        elif isinstance(default, tuple):
            value = tuple(value)
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        elif isinstance(default, float) and isinstance(value, str):
            # YAML 1.1 reads exponents without a sign (1e5) as strings
            try:
                value = float(value)
            except ValueError:
                raise ValidationError(f'configuration key "{dotted}" expects a number, got "{value}"')
        setattr(instance, key, value)
    return instance


def load_config(path: Union[str, Path] = None, overrides: dict = None) -> PipelineConfig:
    """
    Read a YAML configuration and merge it over the defaults.

    Args:
        path: Configuration file. Falls back to ``BPOD_CONFIG`` and then to
            the built-in defaults.
        overrides: Top-level values applied after the file (command-line flags).

    Returns: PipelineConfig (validated)
    """
    path = path or os.getenv('BPOD_CONFIG')
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ValidationError(f'configuration file {path} does not exist')
        with open(path) as handle:
            data = yaml.safe_load(handle) or {}
        logger.debug('loaded configuration from %s', path)

    if os.getenv('BPOD_OUTPUT_DIR') and 'output_dir' not in data:
        data['output_dir'] = os.getenv('BPOD_OUTPUT_DIR')

    cfg = _build(PipelineConfig, data)
    for key, value in (overrides or {}).items():
        if value is not None:
            if key not in {f.name for f in fields(PipelineConfig)}:
                raise ValidationError(f'unknown configuration key "{key}"')
            setattr(cfg, key, value)
    return cfg.validate()


def config_hash(cfg: PipelineConfig, sections: Sequence[str] = None) -> str:
    """
    SHA-256 of the canonical JSON of everything that can change results, or
    of the named top-level sections only.
    """
    record = cfg.to_dict()
    if sections is not None:
        return record_hash({key: record[key] for key in sections})
    for key in _UNHASHED:
        record.pop(key, None)
    return record_hash(record)


def dump_config(cfg: PipelineConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, 'w') as handle:
        yaml.safe_dump(cfg.to_dict(), handle, sort_keys=False, default_flow_style=None)
    return path


class Paths:
    """Object to easily reference the artifacts of one output directory."""

    stages = ('steady', 'eigs', 'snapshots', 'rom', 'oracle', 'lqr', 'lqg', 'simulate', 'bifurcation')

    def __init__(self, dir_out: Union[str, Path] = None):
        self.dir_out = Path(dir_out or os.getenv('BPOD_OUTPUT_DIR') or 'output')

    def __repr__(self):
        return f'{self.__class__.__name__} ({self.dir_out})'

    def stage(self, name: str) -> Path:
        if name not in self.stages:
            raise ValidationError(f'unknown stage "{name}"')
        return self.dir_out / name

    def manifest(self, name: str) -> Path:
        return self.stage(name) / 'manifest.json'

    def create_resources(self) -> Path:
        """Make the output directory and one subdirectory per stage."""
        for name in self.stages:
            pth = self.stage(name)
            if not pth.exists():
                pth.mkdir(parents=True)
        return self.dir_out
