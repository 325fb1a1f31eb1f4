import dataclasses
import json
import math

import pytest

from conftest import ROOT, decay_model
from modules.artifacts import read_json
from modules.cli import depth_fit, main, qq_rows, runtime_slope
from modules.network import dump_model
from modules.workmodel import MachineConstants, host_fingerprint, save_profile


@pytest.fixture
def workspace(tmp_path):
    config = {
        'simulation': {'cv_target': 0.2, 'initial_batch': 50, 'max_batch': 400},
        'paths': {'output_dir': str(tmp_path / 'out'), 'logs_dir': str(tmp_path / 'logs')},
        'machine': {'profile': str(tmp_path / 'machine.json')}
    }
    config_path = tmp_path / 'config.json'
    config_path.write_text(json.dumps(config), encoding='utf-8')
    model = dump_model(decay_model(x0=1000), tmp_path / 'decay.json')
    return {'root': tmp_path, 'config': str(config_path), 'model': str(model)}


@pytest.fixture
def profiled(workspace):
    machine = dataclasses.replace(MachineConstants.reference(), fingerprint=host_fingerprint())
    save_profile(machine, workspace['root'] / 'machine.json')
    return workspace


def _run(workspace, command, *extra):
    return main([command, '--model', workspace['model'], '--config', workspace['config'], *extra])


def _stdout_json(capsys):
    lines = [line for line in capsys.readouterr().out.splitlines() if line.strip()]
    return json.loads(lines[-1])


def test_tolerance_outside_unit_interval(profiled):
    assert _run(profiled, 'calibrate', '--tol', '1.5') == 2


def test_missing_tolerance(profiled):
    assert _run(profiled, 'calibrate') == 2


def test_bad_override(profiled):
    assert _run(profiled, 'calibrate', '--tol', '0.1', '--delta0', '1.5') == 2
    assert _run(profiled, 'calibrate', '--tol', '0.1', '--refine-factor', '1') == 2


@pytest.mark.parametrize('simulation', [{'delta0': 5}, {'cv_target': -1}, {'refine_factor': 1}])
def test_invalid_config_file_is_rejected(profiled, simulation):
    config_path = profiled['root'] / 'config.json'
    config = json.loads(config_path.read_text(encoding='utf-8'))
    config['simulation'].update(simulation)
    config_path.write_text(json.dumps(config), encoding='utf-8')
    assert _run(profiled, 'calibrate', '--tol', '0.1') == 2
    assert (profiled['root'] / 'logs' / 'errors.csv').exists()


def test_missing_profile(workspace):
    assert _run(workspace, 'estimate', '--tol', '0.1') == 2


def test_missing_model(workspace):
    assert main(['validate', '--model', str(workspace['root'] / 'none.json'), '--config', workspace['config']]) == 3


def test_validate_decay(workspace, capsys):
    assert _run(workspace, 'validate', '--simplex-lint') == 0
    summary = _stdout_json(capsys)
    assert summary['is_valid'] is True
    assert summary['simplex']['bounded'] is True


def test_gene_model_is_not_a_simplex(workspace, capsys):
    assert main(['validate', '--model', str(ROOT / 'models' / 'gene.json'), '--config', workspace['config'],
                 '--simplex-lint']) == 0
    assert _stdout_json(capsys)['simplex']['bounded'] is False


def test_calibrate_then_estimate(profiled, capsys):
    out = profiled['root'] / 'out'
    assert _run(profiled, 'calibrate', '--tol', '0.1', '--seed', '3') == 0
    summary = _stdout_json(capsys)
    assert summary['L'] == len(summary['M']) - 1
    assert (out / 'plan.json').exists()
    assert (out / 'plan_levels.csv').exists()

    assert _run(profiled, 'estimate', '--plan', str(out / 'plan.json'), '--seed', '4') == 0
    report = read_json(out / 'report.json', 'report')
    assert abs(report['estimate'] - 606.53) < 0.15 * 606.53
    assert (out / 'report_levels.csv').exists()


def test_diagnose_writes_tables(profiled, capsys):
    out = profiled['root'] / 'out'
    assert _run(profiled, 'diagnose', '--tol', '0.1', '--repeats', '3', '--reference', '606.5306597') == 0
    summary = _stdout_json(capsys)
    assert (out / 'diagnose_steps.csv').exists()
    assert (out / 'diagnose_qq.csv').exists()
    assert 0.0 <= summary['coverage'] <= 1.0


def test_qq_rows_sample_standardized():
    rows = qq_rows([3.0, 1.0, 2.0])
    assert [r['standardized'] for r in rows] == pytest.approx([-1.0, 0.0, 1.0])
    assert rows[0]['theoretical'] == pytest.approx(-rows[2]['theoretical'])
    assert rows[1]['theoretical'] == pytest.approx(0.0)


def test_qq_rows_with_reference():
    rows = qq_rows([11.0, 8.0], reference=10.0, scales=[1.0, 2.0])
    assert [r['standardized'] for r in rows] == pytest.approx([-1.0, 1.0])


def test_depth_fit_is_logarithmic():
    tols = [0.1, 0.05, 0.025, 0.0125]
    fit = depth_fit(tols, [1, 2, 3, 4])
    assert fit['slope'] == pytest.approx(1.0 / math.log(2.0))
    assert math.isnan(depth_fit([0.1], [1])['slope'])


def test_runtime_slope():
    tols = [0.1, 0.05, 0.025]
    assert runtime_slope(tols, [t ** -2 for t in tols]) == pytest.approx(-2.0)
