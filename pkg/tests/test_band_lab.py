import json

import numpy as np
import pytest

from band_lab import main
from module.experiment_module import read_csv, read_header
from module.special_module import limit_coeff


def write_config(path, payload):
    path.write_text(json.dumps(payload), encoding='utf-8')
    return str(path)


def test_configless_run_uses_seed_flag(tmp_path):
    assert main(['--seed', '1', '--out', str(tmp_path), 'wegner']) == 0
    outputs = sorted(tmp_path.glob('wegner-*'))
    assert [p.suffix for p in outputs] == ['.csv', '.json']
    assert read_header(outputs[0])['seed'] == '1'


def test_missing_seed_is_a_validation_error(tmp_path):
    assert main(['--out', str(tmp_path), 'lclt']) == 2


def test_budget_error_exit_code(tmp_path):
    config = write_config(tmp_path / 'sweep.json', {'kind': 'sweep', 'seed': 1, 'budget': 10.0})
    assert main(['--config', config, '--out', str(tmp_path / 'out'), 'sweep']) == 3
    assert not (tmp_path / 'out').exists()


def test_config_kind_must_match_command(tmp_path):
    config = write_config(tmp_path / 'lclt.json', {'kind': 'lclt', 'seed': 1})
    assert main(['--config', config, '--out', str(tmp_path), 'wegner']) == 2


def test_config_file_with_overrides(tmp_path):
    config = write_config(tmp_path / 'lclt.json', {'kind': 'lclt', 'seed': 1, 'out': 'ignored',
                                                   'params': {'L': 64, 'W': 4, 'n': 8}})
    assert main(['--config', config, '--seed', '6', '--out', str(tmp_path / 'run'), 'lclt']) == 0
    csv_path = next((tmp_path / 'run').glob('lclt-*.csv'))
    assert read_header(csv_path)['seed'] == '6'


def test_unreadable_config(tmp_path):
    assert main(['--config', str(tmp_path / 'absent.json'), 'lclt']) == 2


def test_strict_config_rejected_by_cli(tmp_path):
    config = write_config(tmp_path / 'bad.json', {'kind': 'lclt', 'seed': 1, 'params': {'LL': 3}})
    assert main(['--config', config, 'lclt']) == 2


def test_emit_unknown_digest(tmp_path):
    assert main(['--out', str(tmp_path), 'emit', '--digest', 'abc123', '--kind', 'cdf']) == 2


def test_feasibility_error_exit_code(tmp_path):
    assert main(['--out', str(tmp_path), 'profile', '--kind', 'Flat', '--L', '5000']) == 3


def test_profile_export(tmp_path):
    assert main(['--out', str(tmp_path), 'profile', '--L', '8', '--W', '2']) == 0
    frame = read_csv(next(tmp_path.glob('profile-*.csv')))
    assert list(frame.columns) == ['x', 'y', 'p']
    assert len(frame) == 64
    np.testing.assert_allclose(frame.groupby('x')['p'].sum(), 1.0, atol=1e-12)


def test_special_theta_export(tmp_path):
    assert main(['--out', str(tmp_path), 'special', '--function', 'theta', '--tau', '0.5']) == 0
    frame = read_csv(next(tmp_path.glob('special-*.csv')))
    assert list(frame.columns) == ['x', 'theta']
    assert frame['theta'].mean() == pytest.approx(1.0, abs=1e-10)


def test_special_skellam_export(tmp_path):
    assert main(['--out', str(tmp_path), 'special', '--function', 'skellam', '--tau', '1.0', '--D', '8']) == 0
    frame = read_csv(next(tmp_path.glob('special-*.csv')))
    assert len(frame) == 8
    assert frame['probability'].sum() == pytest.approx(1.0, abs=1e-12)


def test_special_rejects_tiny_grid(tmp_path):
    assert main(['--out', str(tmp_path), 'special', '--points', '1']) == 2


def test_unknown_subcommand_exits_through_argparse():
    with pytest.raises(SystemExit) as info:
        main(['teleport'])
    assert info.value.code == 2


def test_special_reference_cdf_export(tmp_path):
    args = ['--out', str(tmp_path), 'special', '--function', 'reference_cdf', '--law', 'gumbel', '--points', '33']
    assert main(args) == 0
    frame = read_csv(next(tmp_path.glob('special-*.csv')))
    assert list(frame.columns) == ['x', 'cdf']
    np.testing.assert_allclose(frame['cdf'], np.exp(-np.exp(-frame['x'])), rtol=1e-12)


def test_special_tracy_widom_cdf_is_monotone(tmp_path):
    assert main(['--out', str(tmp_path), 'special', '--function', 'reference_cdf', '--law', 'tw2']) == 0
    cdf = read_csv(next(tmp_path.glob('special-*.csv')))['cdf']
    assert cdf.is_monotonic_increasing
    assert cdf.iloc[0] < 1e-6 and cdf.iloc[-1] > 1 - 1e-6


def test_special_sinc_export(tmp_path):
    assert main(['--out', str(tmp_path), 'special', '--function', 'sinc', '--m', '8', '--t', '2.0',
                 '--points', '12']) == 0
    frame = read_csv(next(tmp_path.glob('special-*.csv')))
    assert list(frame.columns) == ['x', 'value']
    assert frame.loc[frame['x'].abs() < 1e-12, 'value'].iloc[0] == pytest.approx(1.0)
    assert (frame['value'] >= 0).all()


def test_special_limit_coeff_export(tmp_path):
    assert main(['--out', str(tmp_path), 'special', '--function', 'limit_coeff', '--m', '4', '--points', '9']) == 0
    frame = read_csv(next(tmp_path.glob('special-*.csv')))
    assert list(frame.columns) == ['xi', 'P', 'Q']
    assert frame['P'].iloc[3] == pytest.approx(limit_coeff(4, 1.5)[0], rel=1e-12)
    assert frame['Q'].iloc[-1] == 0.0


def test_compare_chain_flags(tmp_path):
    args = ['--seed', '1', '--out', str(tmp_path), 'compare', '--chain-a', 'Flat', '--chain-b', 'AlphaStable',
            '--n', '4', '--L', '64', '--W', '8']
    assert main(args) == 0
    csv_path = next(tmp_path.glob('compare-*.csv'))
    report = json.loads(csv_path.with_suffix('.json').read_text(encoding='utf-8'))
    assert report['n'] == 4
    assert report['mode'] == 'row'
    assert len(read_csv(csv_path)) == 4


def test_compare_flags_override_config(tmp_path):
    config = write_config(tmp_path / 'compare.json', {'kind': 'compare', 'seed': 1,
                                                      'params': {'L': 64, 'W': 8, 'n': 6}})
    assert main(['--config', config, '--out', str(tmp_path / 'run'), 'compare', '--n', '3']) == 0
    csv_path = next((tmp_path / 'run').glob('compare-*.csv'))
    assert len(read_csv(csv_path)) == 3


def test_compare_rejects_oversized_bandwidth(tmp_path):
    args = ['--seed', '1', '--out', str(tmp_path), 'compare', '--L', '64', '--W', '40']
    assert main(args) == 2
