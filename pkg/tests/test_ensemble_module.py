import math

import numpy as np
import pandas as pd
import pytest

from module.chain_module import ProfileSpec
from module.diagram_module import SpikeOperator
from module.ensemble_module import (
    EdgeSimHandler, EnsembleSpec, deviation_bound_curve, deviation_exponents, edge_observables,
    edge_scale, exceedance_curve, fit_deviation_constants, ks_distance, moment_constant,
    power_iteration_lambda_max, power_law_deviation_bound, reference_distance,
    reference_table_from_simulation, run_digest, sample_matrix,
)
from module.errors import NumericalError, ValidationError


def flat_spec(N=64, **kwargs):
    return EnsembleSpec(ProfileSpec('Flat', {}, L=N), **kwargs)


def band_spec(**kwargs):
    return EnsembleSpec(ProfileSpec('AlphaStable', {'alpha': 2.0}, L=48, W=4), **kwargs)


@pytest.mark.parametrize('law', ['gaussian', 'rademacher', 'uniform'])
def test_real_sample_is_symmetric(law):
    X = sample_matrix(band_spec(law=law, seed=3), 0)
    assert np.array_equal(X, X.T)


def test_complex_sample_is_hermitian():
    X = sample_matrix(band_spec(beta=2, seed=3), 5)
    assert np.array_equal(X, X.conj().T)
    assert np.all(np.diag(X).imag == 0)


def test_samples_are_reproducible():
    spec = band_spec(seed=11)
    assert np.array_equal(sample_matrix(spec, 4), sample_matrix(spec, 4))
    assert not np.array_equal(sample_matrix(spec, 4), sample_matrix(spec, 5))


def test_spike_adds_rank_two_deformation():
    spike = SpikeOperator(strengths=(3.0, 2.0), positions=(5, 20))
    plain = sample_matrix(flat_spec(seed=1), 0)
    spiked = sample_matrix(flat_spec(seed=1, spike=spike), 0)
    difference = spiked - plain
    singular = np.linalg.svd(difference, compute_uv=False)
    assert int(np.sum(singular > 1e-10)) == 2
    assert difference[5, 5] == pytest.approx(3.0)


def test_complex_entry_variance_matches_profile():
    N, trials = 64, 20
    spec = flat_spec(N, beta=2, seed=2)
    upper = np.triu_indices(N, 1)
    values = np.concatenate([np.abs(sample_matrix(spec, t)[upper]) ** 2 for t in range(trials)])
    stderr = values.std(ddof=1) / math.sqrt(values.size)
    assert abs(values.mean() - 1 / N) <= 4 * stderr


def test_real_diagonal_variance_is_doubled():
    N, trials = 64, 40
    spec = flat_spec(N, seed=9)
    values = np.concatenate([np.diag(sample_matrix(spec, t)) ** 2 for t in range(trials)])
    stderr = values.std(ddof=1) / math.sqrt(values.size)
    assert abs(values.mean() - 2 / N) <= 4 * stderr


def test_edge_observables_of_diagonal_matrix():
    X = np.diag(np.arange(1.0, 11.0))
    lam, rescaled, ipr = edge_observables(X, 0.5)
    assert lam == pytest.approx(10.0)
    assert rescaled == pytest.approx(16.0)
    assert ipr == pytest.approx(1.0)


def test_edge_observables_of_flat_vector():
    N = 32
    _, _, ipr = edge_observables(np.full((N, N), 1.0 / N), 1.0)
    assert ipr == pytest.approx(1.0 / N)


def test_eigensolver_failure_names_matrix():
    X = np.eye(4)
    X[1, 2] = X[2, 1] = np.nan
    with pytest.raises(NumericalError, match='矩阵摘要'):
        edge_observables(X, 1.0)


def test_edge_scale_regimes():
    s_small, regime_small, gamma_small = edge_scale(512, 4, 2.0)
    assert regime_small == 'subcritical'
    assert gamma_small == pytest.approx(4 ** 1.2 / 512)
    assert s_small == pytest.approx(4 ** -0.8)
    _, regime_wide, gamma_wide = edge_scale(512, 256, 2.0)
    assert regime_wide == 'critical'
    assert gamma_wide == pytest.approx(256 ** 1.2 / 512)
    assert gamma_wide == pytest.approx(1.5157, abs=1e-4)
    s_flat, regime_flat, gamma_flat = edge_scale(512, 512, 2.0)
    assert regime_flat == 'supercritical'
    assert gamma_flat > 2.0
    assert s_flat == pytest.approx(512 ** (-2 / 3))


@pytest.mark.parametrize('law', ['gaussian', 'rademacher', 'uniform'])
@pytest.mark.parametrize('beta', [1, 2])
def test_moment_constant_of_standard_laws(law, beta):
    assert moment_constant(law, beta) == 1.0


def test_spec_validation_and_digest():
    with pytest.raises(ValidationError):
        flat_spec(beta=4)
    with pytest.raises(ValidationError):
        flat_spec(law='cauchy')
    spec = band_spec(seed=5, spike=SpikeOperator(taus=(1.0,), z=(0.5,)))
    restored = EnsembleSpec.from_json(spec.to_json())
    assert restored.digest == spec.digest
    assert band_spec(seed=6).digest != band_spec(seed=5).digest


def test_ks_distance_against_own_samples():
    samples = np.random.default_rng(0).standard_normal(500)
    assert ks_distance(samples, samples) == 0.0


def test_ks_distance_uniform():
    samples = np.random.default_rng(1).random(100000)
    assert ks_distance(samples, 'uniform', normalize=False) <= 0.01


def test_ks_distance_gumbel_samples():
    samples = np.random.default_rng(2).gumbel(size=20000)
    assert ks_distance(samples, 'gumbel') < 0.02
    assert ks_distance(samples, 'gumbel') < ks_distance(samples, 'tw2')


def test_ks_distance_rejects_degenerate_samples():
    with pytest.raises(ValidationError):
        ks_distance([1.0], 'gumbel')
    with pytest.raises(ValidationError):
        ks_distance([2.0, 2.0, 2.0], 'gumbel')
    with pytest.raises(ValidationError):
        ks_distance([0.1, 0.2], 'not-a-law')


def test_reference_distance_gumbel_tw1():
    distance = reference_distance('gumbel', 'tw1')
    assert 0.01 < distance < 0.15
    assert reference_distance('tw1', 'tw1') == 0.0


def test_deviation_bound_is_decreasing():
    t = np.linspace(0.01, 2.0, 50)
    curve = deviation_bound_curve(4, 256, 0.1, t, C=1.0, c=2.0)
    assert np.all(np.diff(curve) < 0)
    with pytest.raises(ValidationError):
        deviation_bound_curve(4, 256, 0.1, [0.0, 1.0])


def test_deviation_exponents():
    proved, conjectured = deviation_exponents(2.0)
    assert proved == pytest.approx(5 / 6)
    assert conjectured == pytest.approx(5 / 4)


def test_fitted_constant_hits_anchor():
    c = fit_deviation_constants(6, 512, 0.2, 0.3, 0.05, C=0.5)
    value = deviation_bound_curve(6, 512, 0.2, [0.3], C=0.5, c=c)[0]
    assert value == pytest.approx(0.05, rel=1e-12)


def test_exceedance_curve():
    samples = np.array([1.9, 2.05, 2.1, 2.3])
    np.testing.assert_allclose(exceedance_curve(samples, [0.0, 0.1, 0.5]), [0.75, 0.5, 0.0])


def test_power_iteration_matches_eigensolver():
    spec = flat_spec(96, seed=4, spike=SpikeOperator(strengths=(3.0,), positions=(10,)))
    X = sample_matrix(spec, 0)
    exact, _, _ = edge_observables(X, 1.0)
    assert power_iteration_lambda_max(X) == pytest.approx(exact, rel=1e-6)


def test_power_law_deviation_bound_decays():
    y = np.array([1.0, 10.0, 100.0])
    values = power_law_deviation_bound(y, 512, 16, 2.0)
    assert np.all(values > 0)
    assert values[2] < values[1]


def test_edge_simulation_is_thread_independent():
    spec = band_spec(seed=8)
    serial = EdgeSimHandler(spec, {'threads': 1}).run(6)
    parallel = EdgeSimHandler(spec, {'threads': 3}).run(6)
    pd.testing.assert_frame_equal(serial.records, parallel.records)
    np.testing.assert_array_equal(serial.profile_sq, parallel.profile_sq)


def test_edge_sample_set_layout():
    spec = band_spec(seed=8)
    samples = EdgeSimHandler(spec).run(5)
    assert list(samples.records.columns) == ['trial', 'seed', 'lambda_max', 'rescaled', 'ipr']
    assert len(samples.records) == 5
    assert samples.metadata['spec_digest'] == spec.digest
    assert samples.digest == run_digest(spec, 5) != run_digest(spec, 6)
    np.testing.assert_allclose(samples.rescaled, (samples.lambda_max - 2.0) / samples.metadata['s_N'])
    assert samples.profile_sq.sum() == pytest.approx(1.0)
    assert samples.records['seed'].nunique() == 5


def test_reference_table_from_simulation():
    table = reference_table_from_simulation(1, 32, 40, seed=3)
    assert list(table.columns) == ['x', 'cdf']
    assert np.all(np.diff(table['x']) >= 0)
    assert table['cdf'].iloc[-1] == pytest.approx(0.99)


@pytest.mark.parametrize('alpha', [1.0, 1.5, 2.0])
def test_gamma_inverts_critical_bandwidth(alpha):
    N, gamma = 4096, 1.3
    W = (gamma * N) ** (1 - 1 / (3 * alpha))
    s_N, regime, measured = edge_scale(N, W, alpha)
    assert measured == pytest.approx(gamma, rel=1e-12)
    assert regime == 'critical'
    assert s_N == pytest.approx(W ** (-2 * alpha / (3 * alpha - 1)))
    assert edge_scale(N, W / 4, alpha)[2] < measured < edge_scale(N, 4 * W, alpha)[2]
