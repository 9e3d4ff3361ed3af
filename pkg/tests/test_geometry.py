import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from pilotcluster.errors import InvalidParameterError
from pilotcluster.geometry import (
    Deployment,
    _in_cell,
    attenuation,
    attenuation_matrix,
    generate_deployment,
    sample_user_position,
    serving_cell,
    side_length,
    torus_distance,
)

SIDE = 1000.0
coord = st.floats(0, SIDE, allow_nan=False, exclude_max=True)
point = st.tuples(coord, coord)


def test_side_length_from_density():
    assert side_length(16, 25) == pytest.approx(800.0)
    assert side_length(1, 25) == pytest.approx(200.0)
    assert generate_deployment(16, rng=0).side == pytest.approx(800.0)


def test_same_seed_same_positions():
    a = generate_deployment(9, rng=123)
    b = generate_deployment(9, rng=123)
    np.testing.assert_array_equal(a.bs_positions, b.bs_positions)
    assert a.bs_positions.min() >= 0 and a.bs_positions.max() < a.side


@pytest.mark.parametrize("kwargs", [dict(L=0), dict(L=2.5), dict(L=4, density=0),
                                    dict(L=4, gamma=2.0), dict(L=4, d_min=0.0)])
def test_generate_rejects_bad_parameters(kwargs):
    with pytest.raises(InvalidParameterError):
        generate_deployment(**kwargs)


def test_deployment_rejects_out_of_range_coordinates():
    with pytest.raises(InvalidParameterError):
        Deployment(np.array([[0.0, 1000.0]]), 1000.0)
    with pytest.raises(InvalidParameterError):
        Deployment(np.zeros((0, 2)), 1000.0)


def test_bs_positions_are_read_only():
    dep = generate_deployment(3, rng=1)
    with pytest.raises(ValueError):
        dep.bs_positions[0, 0] = 1.0


@pytest.mark.parametrize("a,b,expected", [
    ((0, 0), (0, 0), 0.0),
    ((0, 0), (999, 0), 1.0),
    ((0, 0), (500, 500), 500 * math.sqrt(2)),
])
def test_torus_distance_examples(a, b, expected):
    assert torus_distance(a, b, SIDE) == pytest.approx(expected)


@given(point, point, point)
def test_torus_distance_is_a_metric(a, b, c):
    ab, ba = torus_distance(a, b, SIDE), torus_distance(b, a, SIDE)
    assert ab == ba
    assert ab >= 0
    assert torus_distance(a, a, SIDE) == 0
    assert torus_distance(a, c, SIDE) <= ab + torus_distance(b, c, SIDE) + 1e-9
    assert ab <= SIDE / math.sqrt(2) + 1e-9


def test_serving_cell_examples(dep16):
    assert serving_cell(dep16, dep16.bs_positions[3]) == 3
    single = generate_deployment(1, rng=4)
    z = np.random.default_rng(0).uniform(0, single.side, size=(50, 2))
    assert np.all(serving_cell(single, z) == 0)


def _tie_deployment():
    bs = np.array([[700.0, 100.0], [100.0, 500.0], [700.0, 900.0], [600.0, 650.0], [300.0, 500.0]])
    return Deployment(bs, SIDE)


def test_serving_cell_ties_go_to_lowest_index():
    dep = _tie_deployment()
    z = np.array([200.0, 500.0])
    assert torus_distance(dep.bs_positions[1], z, SIDE) == torus_distance(dep.bs_positions[4], z, SIDE)
    assert serving_cell(dep, z) == 1
    # the fast membership filter follows the same rule
    assert _in_cell(dep, 1, z[None, :])[0]
    assert not _in_cell(dep, 4, z[None, :])[0]


@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_membership_filter_matches_argmin(seed, L):
    dep = generate_deployment(L, rng=seed)
    z = np.random.default_rng(seed + 1).uniform(0, dep.side, size=(300, 2))
    owner = serving_cell(dep, z)
    for j in range(L):
        np.testing.assert_array_equal(_in_cell(dep, j, z), owner == j)
        np.testing.assert_array_equal(_in_cell(dep, j, z, dep.cell_radii[j]), owner == j)


@given(st.integers(0, 2**32 - 1), st.integers(2, 10))
def test_cell_radius_bounds_every_cell_point(seed, L):
    dep = generate_deployment(L, rng=seed)
    z = np.random.default_rng(seed).uniform(0, dep.side, size=(4000, 2))
    owner = serving_cell(dep, z)
    for j in range(L):
        d = torus_distance(dep.bs_positions[j], z[owner == j], dep.side)
        assert np.all(d <= dep.cell_radii[j])


def test_sampled_positions_lie_in_their_cell(dep16):
    rng = np.random.default_rng(5)
    for j in range(dep16.L):
        z = sample_user_position(dep16, j, rng, size=200)
        assert z.shape == (200, 2)
        assert np.all(serving_cell(dep16, z) == j)
    assert sample_user_position(dep16, 0, rng).shape == (2,)


def test_sample_rejects_bad_cell(dep16):
    with pytest.raises(InvalidParameterError):
        sample_user_position(dep16, 16, np.random.default_rng(0))


def test_single_cell_samples_are_uniform_on_square():
    dep = generate_deployment(1, rng=8)
    n = 100_000
    z = sample_user_position(dep, 0, np.random.default_rng(9), size=n)
    se = dep.side / math.sqrt(12) / math.sqrt(n)
    assert np.all(np.abs(z.mean(axis=0) - dep.side / 2) < 3 * se)


@pytest.mark.parametrize("L", [2, 7, 20])
def test_local_sampler_matches_whole_square_rejection(L):
    """Same distribution as drawing on the whole square and keeping cell members."""
    dep = generate_deployment(L, rng=L + 100)
    j = L // 2
    fast = sample_user_position(dep, j, np.random.default_rng(1), size=5000)
    rng = np.random.default_rng(2)
    ref = []
    while sum(len(r) for r in ref) < 5000:
        c = rng.uniform(0, dep.side, size=(20_000, 2))
        ref.append(c[serving_cell(dep, c) == j])
    ref = np.concatenate(ref)[:5000]
    for axis_values in (lambda p: torus_distance(dep.bs_positions[j], p, dep.side),
                        lambda p: (p[:, 0] - dep.bs_positions[j, 0] + dep.side / 2) % dep.side):
        assert sps.ks_2samp(axis_values(fast), axis_values(ref)).pvalue > 1e-3


def test_attenuation_examples():
    dep = Deployment(np.array([[0.0, 0.0]]), SIDE)
    assert attenuation(dep, 0, (10.0, 0.0)) == pytest.approx(1e-3)
    assert attenuation(dep, 0, (0.0, 0.0)) == attenuation(dep, 0, (10.0, 0.0))
    assert attenuation(dep, 0, (0.0, 100.0)) == pytest.approx(1e-6)


@given(st.floats(0, 500), st.floats(0, 500))
def test_attenuation_non_increasing_in_distance(r1, r2):
    dep = Deployment(np.array([[0.0, 0.0]]), SIDE)
    near, far = sorted((r1, r2))
    assert attenuation(dep, 0, (near, 0.0)) >= attenuation(dep, 0, (far, 0.0))


def test_serving_bs_has_strongest_attenuation(dep16):
    rng = np.random.default_rng(11)
    for j in range(dep16.L):
        z = sample_user_position(dep16, j, rng, size=300)
        d = attenuation_matrix(dep16, z)
        assert np.all(d[j] >= d.max(axis=0))
