#!/usr/bin/env python

"""Tests for the `bpod` command line."""
import pytest

from balanced_pod_tools.cli import EXIT_OK, EXIT_VALIDATION, build_parser, main, run_config
from balanced_pod_tools.config import load_config
from balanced_pod_tools.io import read_matrix, read_metadata, read_table

# small random plant with a fast eigenspace search
random_plant = '''
testbed:
  kind: random-lti
  n: 6
  n_u: 2
  gaps: [0.1, 0.5]
spectral:
  k_max: 2
  dt: 0.05
  tol: 1.0e-9
'''


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    monkeypatch.delenv('BPOD_CONFIG', raising=False)
    monkeypatch.delenv('BPOD_OUTPUT_DIR', raising=False)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / 'random.yml'
    path.write_text(random_plant)
    return path


def run(*args) -> int:
    return main(list(args) + ['--log-level', 'WARNING'])


def test_missing_upstream_is_an_artifact_error(tmp_path, config_file):
    assert run('eigs', '--config', str(config_file), '--out', str(tmp_path / 'out')) == EXIT_VALIDATION


def test_invalid_configuration(tmp_path):
    bad = tmp_path / 'bad.yml'
    bad.write_text('snapshots:\n  spacing: 0\n')
    assert run('steady', '--config', str(bad), '--out', str(tmp_path / 'out')) == EXIT_VALIDATION


def test_steady_then_eigs(tmp_path, config_file):
    out = tmp_path / 'out'
    assert run('steady', '--config', str(config_file), '--out', str(out)) == EXIT_OK
    # a linear plant rests at the origin
    assert not read_matrix(out / 'steady' / 'state.txt').any()

    assert run('eigs', '--config', str(config_file), '--out', str(out)) == EXIT_OK
    manifest = read_metadata(out / 'eigs' / 'manifest.json')
    assert manifest['summary']['n_unstable'] == 2
    assert manifest['summary']['pairing_error'] < 1e-8
    assert manifest['upstream']['steady'] == read_metadata(out / 'steady' / 'manifest.json')['hash']
    assert read_matrix(out / 'eigs' / 'phi_u.txt').shape == (6, 2)
    # twice k_max leading eigenvalues are tabulated
    assert len(read_table(out / 'eigs' / 'eigenvalues.csv')) == 4


def test_stale_upstream_needs_force(tmp_path, config_file):
    out = tmp_path / 'out'
    assert run('steady', '--config', str(config_file), '--out', str(out)) == EXIT_OK

    changed = tmp_path / 'changed.yml'
    changed.write_text(random_plant + 'steady:\n  T: 60\n')
    assert run('eigs', '--config', str(changed), '--out', str(out)) == EXIT_VALIDATION
    assert run('eigs', '--config', str(changed), '--out', str(out), '--force') == EXIT_OK


def test_bifurcation_needs_hopf_plant(tmp_path, config_file):
    assert run('bifurcation', '--config', str(config_file), '--out', str(tmp_path / 'out')) == EXIT_VALIDATION


@pytest.mark.parametrize('flag', ['--strict-paper', '--plain-newton'])
def test_line_search_switch(flag):
    cfg = run_config(build_parser().parse_args(['steady', flag]))
    assert cfg.plain_newton is True
    assert run_config(build_parser().parse_args(['steady'])).plain_newton is False


def test_strict_run_records_switch(tmp_path, config_file):
    out = tmp_path / 'out'
    assert run('steady', '--config', str(config_file), '--out', str(out), '--strict-paper') == EXIT_OK
    assert load_config(out / 'steady' / 'config.yml').plain_newton is True
