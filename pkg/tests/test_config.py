#!/usr/bin/env python

"""Tests for `balanced_pod_tools.config`."""
from pathlib import Path

import pytest

from balanced_pod_tools.config import PipelineConfig, Paths, config_hash, dump_config, load_config
from balanced_pod_tools.errors import ValidationError

settings_file = Path(__file__).parent.parent / 'config' / 'settings.yml'


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """Keep a developer's .env out of the results."""
    monkeypatch.delenv('BPOD_CONFIG', raising=False)
    monkeypatch.delenv('BPOD_OUTPUT_DIR', raising=False)


def write_yaml(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def test_defaults():
    cfg = load_config()
    assert cfg.testbed.kind == 'hopf-pde'
    assert cfg.snapshots.n_steps == (cfg.snapshots.n_snapshots - 1) * cfg.snapshots.spacing
    assert cfg.control.c == pytest.approx(1.0e5)
    assert cfg.output_dir == 'output'


def test_settings_file_matches_defaults():
    assert config_hash(load_config(settings_file)) == config_hash(PipelineConfig())


def test_unknown_key_is_named(tmp_path):
    path = write_yaml(tmp_path / 'bad.yml', 'snapshots:\n  spacingg: 10\n')
    with pytest.raises(ValidationError, match='snapshots.spacingg'):
        load_config(path)


def test_unsigned_exponent_is_a_number(tmp_path):
    path = write_yaml(tmp_path / 'c.yml', 'control:\n  c: 1e5\n')
    assert load_config(path).control.c == pytest.approx(1.0e5)
    path = write_yaml(tmp_path / 'c.yml', 'control:\n  c: lots\n')
    with pytest.raises(ValidationError, match='control.c'):
        load_config(path)


def test_snapshot_count_must_match_steps(tmp_path):
    path = write_yaml(tmp_path / 'sn.yml', 'snapshots:\n  n_steps: 1000\n')
    with pytest.raises(ValidationError, match='snapshots.n_steps'):
        load_config(path)


def test_missing_file():
    with pytest.raises(ValidationError):
        load_config('/nonexistent/settings.yml')


def test_environment_output_dir(monkeypatch, tmp_path):
    monkeypatch.setenv('BPOD_OUTPUT_DIR', str(tmp_path))
    assert load_config().output_dir == str(tmp_path)
    # command-line overrides win
    assert load_config(overrides={'output_dir': 'elsewhere'}).output_dir == 'elsewhere'


def test_hash_ignores_bookkeeping_keys():
    first = PipelineConfig()
    second = PipelineConfig(output_dir='somewhere', jobs=4)
    assert config_hash(first) == config_hash(second)
    third = PipelineConfig(seed=1)
    assert config_hash(first) != config_hash(third)
    # a section hash only sees its sections
    assert config_hash(first, ['testbed']) == config_hash(third, ['testbed'])


def test_dump_and_reload(tmp_path):
    cfg = load_config(overrides={'seed': 7})
    cfg.testbed.gaps = (0.2, 0.3)
    back = load_config(dump_config(cfg, tmp_path / 'run.yml'))
    assert back.seed == 7
    assert back.testbed.gaps == (0.2, 0.3)
    assert config_hash(back) == config_hash(cfg)


def test_paths(tmp_path):
    paths = Paths(tmp_path / 'out')
    paths.create_resources()
    assert all(paths.stage(name).is_dir() for name in Paths.stages)
    assert paths.manifest('rom') == tmp_path / 'out' / 'rom' / 'manifest.json'
    with pytest.raises(ValidationError):
        paths.stage('plots')
