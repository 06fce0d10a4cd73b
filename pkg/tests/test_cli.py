"""
Command line: exit codes, error reports, output files and config echoes.
"""

import json
import numpy as np
import yaml
import spinamp_cli
from spinamp import ConfigException
from spinamp_cli import (
    ECHO_NAME, EXIT_CONFIG, EXIT_NUMERIC, EXIT_USAGE, load_config, read_csv,
    read_field, resolve_preset, run_cli, write_echo, write_field
)


def preset_data(name='box_oracle'):
    return yaml.safe_load(resolve_preset(name).read_text())


def write_config(path, data):
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    return path


def error_report(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    return json.loads(lines[-1])


def test_oracle_homogeneous_single_q(capsys):
    "The arc top of q_cr = -30 Hz is printed as CSV."
    assert run_cli(['oracle', 'homogeneous', '--qcr', '-30', '--q', '-30']) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == '# schema=oracle-homogeneous.v1'
    assert lines[1] == 'q_hz,lambda_hz,regime'
    q, rate, regime = lines[2].split(',')
    assert float(q) == -30.0 and float(rate) == 30.0
    assert regime == 'UnstableZeroK'


def test_oracle_box_to_file(tmp_path):
    "A q range gives one row per step."
    out = tmp_path / 'box.csv'
    code = run_cli([
        'oracle', 'box', '--e1', '1.4', '--u1n0', '19', '--q-min', '-60', '--q-max', '0',
        '--steps', '50', '--out', str(out)
    ])
    assert code == 0
    schema, columns, rows = read_csv(out)
    assert schema == 'oracle-box.v1'
    assert columns == ['q_hz', 'lambda_hz', 'level']
    assert len(rows) == 50
    assert all(0.0 <= float(row[1]) <= 19.0 for row in rows)


def test_unknown_flag(capsys):
    "Usage errors exit with 2 and a JSON report."
    assert run_cli(['sweep', '--preset', 'box_oracle', '--bogus']) == EXIT_USAGE
    report = error_report(capsys)
    assert report['exit_code'] == EXIT_USAGE
    assert report['error'] == 'UsageException'


def test_unknown_preset(capsys, tmp_path):
    "A preset that does not exist is a config error."
    assert run_cli(['tf', '--preset', 'nowhere', '--out', str(tmp_path)]) == EXIT_CONFIG
    assert 'box_oracle' in error_report(capsys)['message']


def test_inverted_range_in_file(capsys, tmp_path):
    "Config errors cite the field and its line."
    data = preset_data()
    data['sweep']['q_min_hz'], data['sweep']['q_max_hz'] = 5.0, -80.0
    path = write_config(tmp_path / 'inverted.yaml', data)
    line = next(i for i, text in enumerate(path.read_text().splitlines(), 1) if 'q_min_hz' in text)

    assert run_cli(['sweep', '--config', str(path), '--out', str(tmp_path)]) == EXIT_CONFIG
    message = error_report(capsys)['message']
    assert 'sweep.q_min_hz' in message
    assert f'inverted.yaml:{line}:' in message


def test_inverted_range_override(capsys, tmp_path):
    "Command line overrides are validated too."
    code = run_cli(['sweep', '--preset', 'box_oracle', '--q-min', '10', '--out', str(tmp_path)])
    assert code == EXIT_CONFIG
    assert 'sweep.q_min_hz' in error_report(capsys)['message']


def test_missing_species(capsys, tmp_path):
    "Unknown species presets are config errors."
    data = preset_data()
    data['species'] = 'unobtainium'
    path = write_config(tmp_path / 'species.yaml', data)
    assert run_cli(['tf', '--config', str(path), '--out', str(tmp_path)]) == EXIT_CONFIG
    assert 'unobtainium' in error_report(capsys)['message']


def test_unit_suffix_required(tmp_path):
    "Fields without a unit suffix are rejected."
    data = preset_data()
    data['sweep']['temperature'] = 10.0
    path = write_config(tmp_path / 'suffix.yaml', data)
    try:
        load_config(path)
        assert False, 'Exception should have been thrown.'
    except ConfigException as error:
        assert 'sweep.temperature' in str(error)
        assert 'unit suffix' in str(error)


def test_echo_round_trip(tmp_path):
    "Loading an echoed config gives the same config back."
    for name in ('box_oracle', 'f2_hannover', 'f1_leslie'):
        config = load_config(resolve_preset(name))
        directory = tmp_path / name
        directory.mkdir()
        assert load_config(write_echo(config, directory)) == config


def test_sweep_outputs_and_rerun(tmp_path):
    "A sweep writes its files and rerunning from the echo reproduces it byte for byte."
    first, second = tmp_path / 'first', tmp_path / 'second'
    assert run_cli(['sweep', '--preset', 'box_oracle', '--steps', '141', '--out', str(first)]) == 0

    schema, columns, rows = read_csv(first / 'sweep.csv')
    assert schema == 'sweep.v1'
    assert columns == ['q_hz', 'lambda_hz']
    assert len(rows) == 141
    q = np.array([float(row[0]) for row in rows])
    assert np.all(np.diff(q) > 0)

    summary = json.loads((first / 'summary.json').read_text())
    assert summary['scenario'] == 'box_oracle'
    assert len(summary['resonances']) >= 5
    assert summary['lambda_max_hz'] <= summary['spin_energy_hz'] * (1 + 1e-9)
    assert (first / 'reference.csv').is_file()
    assert (first / ECHO_NAME).is_file()

    assert run_cli(['sweep', '--config', str(first / ECHO_NAME), '--out', str(second)]) == 0
    assert (first / 'sweep.csv').read_bytes() == (second / 'sweep.csv').read_bytes()
    assert (first / 'summary.json').read_bytes() == (second / 'summary.json').read_bytes()


def test_tf_outputs(tmp_path):
    "The density field integrates to the atom number."
    assert run_cli(['tf', '--preset', 'box_oracle', '--out', str(tmp_path)]) == 0
    density, spacing = read_field(tmp_path / 'density.bin')
    assert density.shape == (160,)
    assert abs(density.sum() * spacing[0] - 1000.0) < 1e-7
    report = json.loads((tmp_path / 'tf.json').read_text())
    assert report['spin_energy_hz'] > 0
    assert report['mu_hz'] > report['spin_energy_hz']


def test_mode_profile(tmp_path):
    "An unstable q writes a normalized mode profile."
    assert run_cli(['mode-profile', '--preset', 'box_oracle', '--q', '-32', '--out', str(tmp_path)]) == 0
    profile, spacing = read_field(tmp_path / 'mode_profile.bin')
    assert abs(profile.sum() * spacing[0] - 1.0) < 1e-10
    report = json.loads((tmp_path / 'profile.json').read_text())
    assert report['q'] == -32.0
    assert report['lambda_hz'] > 0
    assert report['unstable_count'] >= 1
    assert not (tmp_path / 'column_density.bin').exists()

    schema, columns, rows = read_csv(tmp_path / 'spectrum.csv')
    assert schema == 'spectrum.v1'
    assert columns == ['q_hz', 're_xi', 'im_xi']
    assert len(rows) % 2 == 0
    assert all(float(row[0]) == -32.0 for row in rows)
    assert max(float(row[2]) for row in rows) == report['lambda_hz']
    assert sum(float(row[2]) > 1e-6 for row in rows) == report['unstable_count']


def test_unwritable_output_is_config_error(capsys, tmp_path):
    "An output path that is a regular file exits with 3 and a JSON report."
    blocker = tmp_path / 'taken'
    blocker.write_text('not a directory')
    assert run_cli(['tf', '--preset', 'box_oracle', '--out', str(blocker)]) == EXIT_CONFIG
    report = error_report(capsys)
    assert report['exit_code'] == EXIT_CONFIG
    assert report['error'] == 'FileExistsError'


def test_linear_algebra_failure_is_numeric_error(capsys, monkeypatch, tmp_path):
    "A LinAlgError raised inside a command exits with 4 instead of a traceback."
    def singular(config, out):
        raise np.linalg.LinAlgError('Singular matrix')

    monkeypatch.setattr(spinamp_cli, 'run_tf', singular)
    assert run_cli(['tf', '--preset', 'box_oracle', '--out', str(tmp_path)]) == EXIT_NUMERIC
    report = error_report(capsys)
    assert report['error'] == 'LinAlgError'
    assert 'Singular matrix' in report['message']


def test_modes_export(tmp_path):
    "Exported modes are written next to the energy table."
    assert run_cli(['modes', '--preset', 'box_oracle', '--export', '0,1', '--out', str(tmp_path)]) == 0
    _, _, rows = read_csv(tmp_path / 'modes.csv')
    energies = [float(row[1]) for row in rows]
    assert energies == sorted(energies)
    mode, _ = read_field(tmp_path / 'mode_1.bin')
    assert mode.shape == (160,)


def test_coarse_grid_is_numeric_error(capsys, tmp_path):
    "A grid coarser than the healing length exits with 4."
    data = preset_data()
    data['grid']['points'] = [20]
    path = write_config(tmp_path / 'coarse.yaml', data)
    assert run_cli(['modes', '--config', str(path), '--out', str(tmp_path)]) == EXIT_NUMERIC
    report = error_report(capsys)
    assert report['error'] == 'ResolutionException'
    assert 'Required spacing' in report['message']


def test_field_file_round_trip(tmp_path):
    "Field files keep shape, spacing and values."
    values = np.arange(12.0).reshape(3, 4) / 7.0
    write_field(tmp_path / 'field.bin', values, (0.5, 0.25))
    loaded, spacing = read_field(tmp_path / 'field.bin')
    assert np.array_equal(loaded, values)
    assert spacing == (0.5, 0.25)
