import math

import numpy as np
import pytest

from pilotcluster.errors import InvalidParameterError, RankDeficientError, ZFInfeasibleError
from pilotcluster.game import CoalitionStructure
from pilotcluster.geometry import generate_deployment
from pilotcluster.propagation import estimate_mu
from pilotcluster.utility import SystemParams, structure_utilities
from pilotcluster.validator import (
    MCResult,
    _batched_assignment,
    _colliders,
    combiners,
    compare,
    complex_normal,
    cross_estimate,
    mmse_estimate,
    monte_carlo_se,
    sample_pilot_assignment,
    sample_realization,
    validate,
)

SNR = 10**0.5


@pytest.fixture(scope="module")
def pair():
    """Two cells sharing a pool of 10 pilots that both use fully: one collider per user."""
    dep = generate_deployment(2, rng=31)
    params = SystemParams(L=2, M=400, S=20, alpha=0.5, snr=SNR)
    return dep, params, CoalitionStructure.grand(2)


def test_complex_normal_variance():
    z = complex_normal(np.random.default_rng(0), 200_000, 3.0)
    assert np.mean(np.abs(z) ** 2) == pytest.approx(3.0, rel=0.02)
    assert abs(np.mean(z)) < 0.02


def test_specific_user_collides_with_probability_one_over_pool():
    # user 0 of cell j and user 0 of cell l share a pilot with probability 1/P
    P, n = 24, 100_000
    rng = np.random.default_rng(1)
    a = _batched_assignment(6, P, n, rng)[:, 0]
    b = _batched_assignment(10, P, n, rng)[:, 0]
    freq = np.mean(a == b)
    assert abs(freq - 1 / P) < 3 * math.sqrt((1 / P) * (1 - 1 / P) / n)


def test_per_cell_assignment_is_uniform_and_distinct():
    rng = np.random.default_rng(2)
    draws = np.array([sample_pilot_assignment([3], 8, rng)[0] for _ in range(20_000)])
    assert all(len(set(row)) == 3 for row in draws[:200])
    counts = np.bincount(draws[:, 0], minlength=8) / len(draws)
    assert np.all(np.abs(counts - 1 / 8) < 4 * math.sqrt((1 / 8) * (7 / 8) / len(draws)))
    with pytest.raises(InvalidParameterError):
        sample_pilot_assignment([9], 8, rng)


def test_singleton_cells_have_no_colliders(pair):
    dep, params, _ = pair
    real = sample_realization(dep, CoalitionStructure.singletons(2), params, np.random.default_rng(3))
    assert all(len(_colliders(real, j, k)) == 0 for j in range(2) for k in range(len(real.pilot_ids[j])))


def test_mmse_noiseless_without_collisions_recovers_channel(pair):
    dep, params, _ = pair
    loud = params.with_(snr=1e12)
    real = sample_realization(dep, CoalitionStructure.singletons(2), loud, np.random.default_rng(4))
    h_hat, delta = mmse_estimate(0, 0, real, loud)
    u = real.layout.offsets[0]
    np.testing.assert_allclose(h_hat, real.channels[0][:, u], rtol=1e-5, atol=0)
    assert delta == pytest.approx(real.layout.d[0, u], rel=1e-9)


def test_estimate_and_error_variances(pair):
    dep, params, C = pair
    rng = np.random.default_rng(5)
    real0 = sample_realization(dep, C, params, rng)
    layout = real0.layout
    est, err, cross, cross_err = [], [], [], []
    for _ in range(30):
        real = sample_realization(dep, C, params, rng, layout=layout)
        h_hat, delta = mmse_estimate(0, 0, real, params)
        u = layout.offsets[0]
        est.append(h_hat / math.sqrt(delta))
        err.append((real.channels[0][:, u] - h_hat) / math.sqrt(layout.d[0, u] - delta))
        (m,) = [k for k in range(len(real.pilot_ids[1])) if real.pilot_ids[1][k] == real.pilot_ids[0][0]]
        g = cross_estimate(0, 1, m, 0, real, h_hat)
        um = layout.offsets[1] + m
        scale = layout.d[0, um] / math.sqrt(layout.d[0, u] * layout.d[1, um])
        cross.append(g / (scale * math.sqrt(delta)))
        cross_err.append((real.channels[0][:, um] - g) / math.sqrt(layout.d[0, um] - scale**2 * delta))
    for sample in (est, err, cross, cross_err):
        assert np.mean(np.abs(np.concatenate(sample)) ** 2) == pytest.approx(1.0, rel=0.05)


def test_cross_estimate_identity_and_precondition(pair):
    dep, params, C = pair
    real = sample_realization(dep, C, params, np.random.default_rng(6))
    h_hat, _ = mmse_estimate(1, 2, real, params)
    np.testing.assert_array_equal(cross_estimate(1, 1, 2, 2, real, h_hat), h_hat)
    other = next(m for m in range(10) if real.pilot_ids[0][m] != real.pilot_ids[1][2])
    with pytest.raises(InvalidParameterError):
        cross_estimate(1, 0, other, 2, real, h_hat)


def _cell_estimates(real, params, j):
    est = [mmse_estimate(j, k, real, params) for k in range(len(real.pilot_ids[j]))]
    return np.stack([e[0] for e in est], axis=1), np.array([e[1] for e in est])


def test_combiners(pair):
    dep, params, C = pair
    rng = np.random.default_rng(7)
    real = sample_realization(dep, C, params, rng)
    H, delta = _cell_estimates(real, params, 0)
    G = combiners(0, H, delta, "zfc")
    np.testing.assert_allclose(G.conj().T @ H, np.eye(H.shape[1]), atol=1e-9)
    gains = []
    for _ in range(20):
        real = sample_realization(dep, C, params, rng, layout=real.layout)
        H, delta = _cell_estimates(real, params, 0)
        gains.append(np.sum(combiners(0, H, delta, "mrc").conj() * H, axis=0))
    assert np.mean(gains).real == pytest.approx(1.0, rel=0.01)
    # with one user ZF is the MRC direction up to |h|^2 / (M delta)
    zf = combiners(0, H[:, :1], delta[:1], "zfc")[:, 0]
    mrc = combiners(0, H[:, :1], delta[:1], "mrc")[:, 0]
    assert np.allclose(zf / np.vdot(mrc, zf).real * np.vdot(mrc, mrc).real, mrc)
    assert abs(np.linalg.norm(zf) / np.linalg.norm(mrc) - 1) < 0.2


def test_zf_combiner_rank_checks():
    H = complex_normal(np.random.default_rng(8), (4, 4))
    with pytest.raises(RankDeficientError):
        combiners(0, H, np.ones(4), "zfc")
    with pytest.raises(RankDeficientError):
        combiners(0, np.zeros((6, 2), complex), np.ones(2), "zfc")


@pytest.mark.parametrize("scheme", ["mrc", "zfc"])
def test_single_cell_closed_form_is_a_lower_bound(scheme):
    dep = generate_deployment(1, rng=9)
    params = SystemParams(L=1, M=100, S=400, alpha=0.5, snr=SNR, K_max=10)
    rep = validate(CoalitionStructure.singletons(1), params, dep, scheme, n_position_draws=60,
                   n_channel_draws=200, mu_samples=10, rng=10)
    assert rep.closed_form[0] <= rep.mc[0] + 2 * rep.std_err[0]
    assert rep.passed


def test_explicit_and_conditional_estimators_agree(pair):
    dep, _, C = pair
    params = SystemParams(L=2, M=40, S=20, alpha=0.5, snr=SNR)
    for scheme in ("mrc", "zfc"):
        a = monte_carlo_se(C, params, dep, scheme, 30, 150, rng=11, method="explicit")
        b = monte_carlo_se(C, params, dep, scheme, 30, 150, rng=11, method="conditional")
        diff = a.samples - b.samples  # same layouts, independent channel draws
        se = diff.std(axis=0, ddof=1) / math.sqrt(len(diff))
        assert np.all(np.abs(diff.mean(axis=0)) < 4 * se + 1e-3 * b.se)


def test_monte_carlo_argument_checks(pair):
    dep, params, C = pair
    with pytest.raises(ZFInfeasibleError):
        monte_carlo_se(C, params.with_(M=10), dep, "zfc", 2, 2)
    with pytest.raises(InvalidParameterError):
        monte_carlo_se(C, params, dep, "mrc", 0, 2)
    with pytest.raises(InvalidParameterError):
        monte_carlo_se(C, params, dep, "mrc", 2, 2, method="exact")


def test_compare_flags_an_inflated_closed_form():
    mc = MCResult(np.array([10.0, 20.0]), np.array([0.05, 0.1]), np.zeros((2, 2)))
    assert compare([9.8, 19.5], mc, "mrc").passed
    bad = compare(np.array([9.8, 19.5]) * 1.2, mc, "mrc")
    assert not bad.passed and not bad.lower_bound_ok.any()
    assert not compare([9.0, 19.5], mc, "mrc", tolerance=0.05).passed  # gap 10%
    assert list(bad.rows())[0][:2] == [0, "mrc"]


@pytest.fixture(scope="module")
def four_cells():
    dep = generate_deployment(4, rng=12)
    return dep, estimate_mu(dep, 100_000, rng=13), SystemParams.create(4, 500)


@pytest.mark.parametrize("scheme", ["mrc", "zfc"])
def test_two_block_partition_validates(four_cells, scheme):
    dep, stats, params = four_cells
    C = CoalitionStructure.parse("{0,2}{1,3}")
    rep = validate(C, params, dep, scheme, n_position_draws=80, n_channel_draws=200, rng=14,
                   stats=stats)
    assert rep.passed, (rep.gap, rep.lower_bound_ok)
    corrupted = compare(structure_utilities(C, stats, params, scheme)[0] * 1.2,
                        MCResult(rep.mc, rep.std_err, np.zeros(0)), scheme)
    assert not corrupted.passed


def test_different_seeds_agree_within_sampling_error(four_cells):
    dep, _, params = four_cells
    C = CoalitionStructure.parse("{0,1}{2,3}")
    a = monte_carlo_se(C, params, dep, "mrc", 40, 100, rng=15)
    b = monte_carlo_se(C, params, dep, "mrc", 40, 100, rng=16)
    assert np.all(np.abs(a.se - b.se) < 4 * np.hypot(a.std_err, b.std_err))
    c = monte_carlo_se(C, params, dep, "mrc", 40, 100, rng=15)
    np.testing.assert_array_equal(a.samples, c.samples)
