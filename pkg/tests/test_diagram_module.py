import json
import logging
import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import comb

from module.chain_module import ProfileSpec, build_variance_profile, dense_power, flat_chain, n_step_tables
from module.diagram_module import (
    Diagram, Edge, Face, SpikeOperator, Vertex, constraint_volume, critical_spike_strength,
    diagram_difference_bound, diagram_from_json, diagram_function, diagram_to_json,
    diagram_upper_bound, lattice_constant_C, lattice_count, limiting_diagram_function,
    load_catalog, load_diagram, parity_constant, validate_diagram,
)
from module.errors import FeasibilityError, ValidationError
from module.special_module import skellam_kernel


def boundary_loop() -> Diagram:
    return Diagram([Vertex(0, marked=True, boundary=True)], [Edge(0, 0, 0, boundary=True)],
                   [Face(0, {0: 1})], name='boundary_loop')


def cumulative_b(chain, n):
    return float(np.cumsum(n_step_tables(chain, n), axis=0)[-1].max())


@pytest.mark.parametrize('name,ell,s', [
    ('single_vertex', -1, 1), ('self_loop', 0, 1), ('theta', 1, 1),
    ('dumbbell', 1, 3), ('two_face_bridge', 0, 2),
])
def test_catalog_is_typical(catalog, name, ell, s):
    report = validate_diagram(catalog[name])
    assert report.valid, report.violations
    assert report.typical
    assert (report.ell, report.s) == (ell, s)


def test_low_degree_vertex_is_rejected():
    diagram = Diagram([Vertex(0, marked=True), Vertex(1), Vertex(2)],
                      [Edge(0, 0, 1), Edge(1, 1, 2), Edge(2, 2, 0)],
                      [Face(0, {0: 2, 1: 2, 2: 2})])
    report = validate_diagram(diagram)
    assert not report.valid
    assert any('度数' in v for v in report.violations)


def test_interior_edge_needs_two_sides():
    diagram = Diagram([Vertex(0, marked=True)], [Edge(0, 0, 0)], [Face(0, {0: 1})])
    assert not validate_diagram(diagram).valid
    with pytest.raises(ValidationError):
        diagram_function(diagram, flat_chain(4), [4])


def test_boundary_loop_is_valid():
    report = validate_diagram(boundary_loop())
    assert report.valid and report.has_boundary


def test_diagram_json_round_trip(catalog):
    for diagram in catalog.values():
        assert diagram_from_json(diagram_to_json(diagram)) == diagram


def test_load_diagram_from_file(tmp_path, catalog):
    payload = diagram_to_json(catalog['theta'])
    del payload['name']
    path = tmp_path / 'my_theta.json'
    path.write_text(json.dumps(payload), encoding='utf-8')
    diagram = load_diagram(path)
    assert diagram.name == 'my_theta'
    assert diagram.edges == catalog['theta'].edges
    (tmp_path / 'broken.json').write_text('{', encoding='utf-8')
    with pytest.raises(ValidationError):
        load_diagram(tmp_path / 'broken.json')


def test_unknown_catalog_name():
    with pytest.raises(ValidationError):
        load_catalog('tetrahedron')


def test_single_vertex_counts_states(catalog, flat8):
    assert diagram_function(catalog['single_vertex'], flat8, [4]) == pytest.approx(8.0)
    assert diagram_function(catalog['single_vertex'], flat8, [3]) == 0.0


def test_self_loop_on_flat_chain(catalog, flat8):
    assert diagram_function(catalog['self_loop'], flat8, [8]) == pytest.approx(4.0, abs=1e-12)
    assert diagram_function(catalog['self_loop'], flat8, [7]) == 0.0


def test_self_loop_matches_traces(catalog, band32):
    expected = sum(np.trace(dense_power(band32, w)) for w in (1, 2, 3))
    assert diagram_function(catalog['self_loop'], band32, [6]) == pytest.approx(expected, rel=1e-12)


def test_bridge_matches_traces(catalog, band32):
    n = 6
    expected = sum((s - 1) * np.trace(dense_power(band32, s)) for s in range(2, n + 1, 2))
    assert diagram_function(catalog['two_face_bridge'], band32, [n, n]) == pytest.approx(expected, rel=1e-12)


def test_bridge_parity_mismatch_vanishes(catalog, flat8):
    assert diagram_function(catalog['two_face_bridge'], flat8, [4, 4]) == pytest.approx(4.0)
    assert diagram_function(catalog['two_face_bridge'], flat8, [4, 6]) == pytest.approx(4.0)
    assert diagram_function(catalog['two_face_bridge'], flat8, [4, 5]) == 0.0


def test_theta_on_flat_chain(catalog, flat8):
    assert diagram_function(catalog['theta'], flat8, [12]) == pytest.approx(comb(6, 4) / 8, rel=1e-12)
    assert diagram_function(catalog['theta'], flat8, [13]) == 0.0


def test_boundary_loop_sums_spike_powers(flat8):
    spikes = SpikeOperator(strengths=(1.5,))
    assert diagram_function(boundary_loop(), flat8, [4], spikes=spikes) == pytest.approx(1.5 ** 2 + 1.5 ** 4)
    with pytest.raises(ValidationError):
        diagram_function(boundary_loop(), flat8, [4])


def test_diagram_function_feasibility(catalog, flat8):
    with pytest.raises(FeasibilityError):
        diagram_function(catalog['theta'], flat8, [12], cap=10)


def test_orders_must_match_faces(catalog, flat8):
    with pytest.raises(ValidationError):
        diagram_function(catalog['two_face_bridge'], flat8, [4])


@pytest.mark.parametrize('chain', [
    flat_chain(16),
    build_variance_profile(ProfileSpec('AlphaStable', {'alpha': 2.0}, L=16, W=8)),
], ids=['flat', 'band'])
def test_diagram_function_below_upper_bound(catalog, chain):
    for n in range(4, 25):
        cases = [('self_loop', [n]), ('theta', [n]), ('two_face_bridge', [n // 2, n - n // 2])]
        if n in (4, 6):
            cases.append(('dumbbell', [n, n, n]))
        for name, orders in cases:
            total = sum(orders)
            value = diagram_function(catalog[name], chain, orders)
            bound = diagram_upper_bound(catalog[name], cumulative_b(chain, total), total, chain.N)
            assert value <= bound * (1 + 1e-12), (name, n)


def test_upper_bound_formula(catalog):
    assert diagram_upper_bound(catalog['theta'], 2.0, 10, 16) == pytest.approx(16 * 4.0 * 100 / 2)
    loop = boundary_loop()
    assert diagram_upper_bound(loop, 2.0, 4, 16, a=1.5, r=1) == pytest.approx((1 + 1.5 ** 4) * 2.0 ** 0 * 4)


def test_difference_bound_formula(catalog):
    assert diagram_difference_bound(catalog['single_vertex'], 2.0, 0.1, 0.1, 8, 16) == 0.0
    # 自环只有一个顶点，只剩 ℓ∞ 估计
    assert diagram_difference_bound(catalog['self_loop'], 2.0, 0.1, 0.3, 8, 16) == pytest.approx(16 * 0.1)
    bridge = diagram_difference_bound(catalog['two_face_bridge'], 2.0, 0.1, 0.3, 8, 16)
    assert bridge == pytest.approx(2 * max(16 * 0.1 * 8, 16 * 2.0 * 0.3))


@pytest.mark.parametrize('name,expected', [
    ('single_vertex', 1.0), ('self_loop', 1.0), ('theta', 1.0),
    ('two_face_bridge', 0.5), ('dumbbell', 0.25),
])
def test_parity_constant(catalog, name, expected):
    assert parity_constant(catalog[name]) == expected


def test_parity_constant_inconsistent_parities(catalog):
    assert parity_constant(catalog['two_face_bridge'], [0, 1]) == 0.0
    assert parity_constant(catalog['dumbbell'], [1, 0, 0]) == 0.0
    assert parity_constant(catalog['dumbbell'], [1, 0, 1]) == 0.25
    assert parity_constant(boundary_loop()) == 0.5


def test_constraint_volume_exact(catalog):
    assert constraint_volume(catalog['theta'], [4.0])[0] == pytest.approx(16 / 24, rel=1e-9)
    assert constraint_volume(catalog['two_face_bridge'], [3.0, 5.0])[0] == pytest.approx(4.5, rel=1e-9)
    assert constraint_volume(catalog['dumbbell'], [1.0, 1.0, 2.0])[0] == pytest.approx(5 / 288, rel=1e-9)
    assert constraint_volume(catalog['self_loop'], [3.0]) == (1.5, 0.0)


def test_constraint_volume_degenerate(catalog):
    assert constraint_volume(catalog['single_vertex'], [2.0]) == (1.0, 0.0)
    assert constraint_volume(catalog['two_face_bridge'], [0.0, 2.0]) == (0.0, 0.0)
    with pytest.raises(ValidationError):
        constraint_volume(catalog['theta'], [-1.0])


def test_constraint_volume_monte_carlo(catalog):
    volume, stderr = constraint_volume(catalog['dumbbell'], [1.0, 1.0, 2.0], method='montecarlo',
                                       samples=200000, seed=3)
    assert stderr > 0
    assert abs(volume - 5 / 288) <= 4 * stderr


def test_lattice_count(catalog):
    assert lattice_count(catalog['theta'], [12]) == pytest.approx(comb(6, 4))
    assert lattice_count(catalog['self_loop'], [10]) == pytest.approx(5)


def test_lattice_constant_matches_parity_constant(catalog):
    for name in ('self_loop', 'two_face_bridge'):
        result = lattice_constant_C(catalog[name], n_max=40)
        np.testing.assert_allclose(result.ratios, parity_constant(catalog[name]), rtol=1e-9)
        assert result.drift == pytest.approx(0.0, abs=1e-9)
        assert result.extrapolated == pytest.approx(result.limit, abs=1e-9)


def test_lattice_constant_converges_for_theta(catalog):
    result = lattice_constant_C(catalog['theta'], n_max=64)
    assert result.ratios == sorted(result.ratios)
    assert abs(result.extrapolated - 1.0) < abs(result.ratios[-1] - 1.0)


def test_super_limit_of_self_loop(catalog):
    result = limiting_diagram_function(catalog['self_loop'], 'super', [2.0])
    assert result.estimate == pytest.approx(0.5, abs=1e-12)
    assert result.stderr == 0.0


def test_sub_limit_of_self_loop_is_exact(catalog):
    result = limiting_diagram_function(catalog['self_loop'], 'sub', [2.0], samples=1000)
    assert result.estimate == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-10)
    assert not result.resample_recommended


def test_sub_limit_of_self_loop_stable(catalog):
    expected = 0.5 * 3.0 * math.gamma(1 + 1 / 1.5) / math.pi
    result = limiting_diagram_function(catalog['self_loop'], 'sub', [2.0], alpha=1.5, samples=50000, seed=1)
    assert abs(result.estimate - expected) <= 4 * result.stderr + 1e-4


def test_sub_limit_of_bridge(catalog):
    expected = 0.125 * (2 / 3) * 2 ** 1.5 / math.sqrt(2 * math.pi)
    result = limiting_diagram_function(catalog['two_face_bridge'], 'sub', [2.0, 2.0], samples=50000, seed=2)
    assert result.C == 0.5
    assert abs(result.estimate - expected) <= 4 * result.stderr


def test_crit_limit_of_self_loop(catalog):
    t = 2 * 20 ** (-1 / 3)
    expected = (t / 2 + 1 / 2400) / t
    result = limiting_diagram_function(catalog['self_loop'], 'crit', [t], gamma=20.0, samples=100000, seed=4)
    assert abs(result.estimate - expected) <= 4 * result.stderr


def test_crit_limit_scales_to_sub(catalog):
    result = limiting_diagram_function(catalog['self_loop'], 'crit', [2.0], tau=0.0025, samples=20000, seed=5)
    assert 0.05 * result.estimate == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-3)


def test_deformed_limit_of_boundary_loop():
    spikes = SpikeOperator(taus=(0.5,), z=(0.0,))
    result = limiting_diagram_function(boundary_loop(), 'deformed', [2.0], gamma=1.0, spikes=spikes,
                                       samples=40000, seed=6)
    assert abs(result.estimate - 0.5 * (math.e - 1)) <= 4 * result.stderr


def wegner_blocks(D, M, lam):
    return build_variance_profile(ProfileSpec('WegnerBlock', {'D': D, 'M': M, 'lam': lam}))


def test_skellam_limit_of_self_loop(catalog):
    D, t = 4, 2.0
    expected = D / t * integrate.quad(lambda x: skellam_kernel(1, D, 0, x / 2), 0, t / 2)[0]
    result = limiting_diagram_function(catalog['self_loop'], 'skellam', [t], mu=0.5, D=D, samples=100000, seed=7)
    assert result.regime == 'skellam'
    assert abs(result.estimate - expected) <= 4 * result.stderr


def test_skellam_limit_matches_wegner_blocks(catalog):
    D, M, lam, n = 4, 8, 0.01, 200
    chain = wegner_blocks(D, M, lam)
    mu = M ** (1 / 3) * lam
    for name, orders in (('self_loop', [n]), ('two_face_bridge', [n, n])):
        finite = diagram_function(catalog[name], chain, orders) / math.prod(orders)
        limit = limiting_diagram_function(catalog[name], 'skellam', [n * lam] * len(orders), mu=mu, D=D,
                                          samples=200000, seed=8)
        assert limit.estimate == pytest.approx(finite, rel=0.03)


def test_skellam_limit_scales_with_mu(catalog):
    theta = catalog['theta']
    slow = limiting_diagram_function(theta, 'skellam', [1.0], mu=0.5, D=3, samples=20000, seed=9)
    fast = limiting_diagram_function(theta, 'skellam', [1.0], mu=1.0, D=3, samples=20000, seed=9)
    # μ^{s−|E|}，theta 图 s=1、|E|=4
    assert slow.estimate == pytest.approx(8 * fast.estimate, rel=1e-12)


def test_skellam_limit_argument_checks(catalog):
    with pytest.raises(ValidationError):
        limiting_diagram_function(catalog['self_loop'], 'skellam', [1.0], D=4)
    with pytest.raises(ValidationError):
        limiting_diagram_function(catalog['self_loop'], 'skellam', [1.0], mu=1.0, D=1)
    with pytest.raises(ValidationError):
        limiting_diagram_function(boundary_loop(), 'skellam', [1.0], mu=1.0, D=4)
    with pytest.raises(FeasibilityError):
        limiting_diagram_function(catalog['dumbbell'], 'skellam', [1.0] * 3, mu=1.0, D=64, d=2)


def test_limit_flags_noisy_estimate(catalog, caplog):
    with caplog.at_level(logging.WARNING):
        result = limiting_diagram_function(catalog['theta'], 'crit', [1.0], gamma=2.0, samples=50,
                                           tolerance=1e-6)
    assert result.resample_recommended
    assert '建议增加样本' in caplog.text


def test_limit_argument_checks(catalog):
    with pytest.raises(ValidationError):
        limiting_diagram_function(catalog['self_loop'], 'hyper', [1.0])
    with pytest.raises(ValidationError):
        limiting_diagram_function(catalog['self_loop'], 'sub', [1.0], alpha=0.8)
    with pytest.raises(ValidationError):
        limiting_diagram_function(catalog['self_loop'], 'crit', [1.0])
    with pytest.raises(ValidationError):
        limiting_diagram_function(boundary_loop(), 'deformed', [1.0], gamma=1.0)


def test_critical_spike_strength():
    assert critical_spike_strength(1.0, 16, 2.0) == pytest.approx(1 + 16 ** (-0.4))
    spikes = SpikeOperator(taus=(1.0, -0.5))
    np.testing.assert_allclose(spikes.eigenvalues(16), [1 + 16 ** -0.4, 1 - 0.5 * 16 ** -0.4])


def test_spike_operator_matrix():
    vectors = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2)
    spikes = SpikeOperator(strengths=(2.0, 0.5), vectors=vectors, positions=(3, 10))
    A = spikes.full_matrix(16)
    np.testing.assert_allclose(A, A.T)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(A))[[0, -2, -1]], [0.0, 0.5, 2.0], atol=1e-12)
    assert A[3, 10] == pytest.approx(0.75)
    restored = SpikeOperator.from_json(spikes.to_json())
    np.testing.assert_allclose(restored.full_matrix(16), A)


def test_spike_operator_checks():
    with pytest.raises(ValidationError):
        SpikeOperator(strengths=(1.0, 2.0), vectors=np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValidationError):
        SpikeOperator(strengths=(1.0, 2.0), positions=(4, 4)).full_matrix(8)
