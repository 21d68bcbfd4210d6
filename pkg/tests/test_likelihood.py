import numpy as np
import pytest

from incomplete_mle.core.likelihood import (
    complete_loglik,
    observed_loglik,
    observed_loglik_per_path,
    path_scores,
    posterior_matrix,
    posterior_weights,
    score,
    weighted_stats,
)
from incomplete_mle.exceptions import SampleError
from incomplete_mle.models.params import ModelParams, PathStats, SampleStats
from tests.conftest import draw_sample, fd_gradient, random_params


def brute_force_loglik(stats, m, theta):
    value = 0.0
    for x in range(theta.p):
        value += stats.B[x] * np.log(theta.phi[x, m])
        for y in range(theta.p):
            if y != x:
                q = theta.q[m, x, y]
                value += stats.N[x, y] * np.log(q) - q * stats.T[x]
    return value


def paths_of(sample):
    return [PathStats.create(sample.B[k], sample.N[k], sample.T[k], sample.T[k].sum()) for k in range(sample.n)]


def symmetric(theta):
    """Two identical regimes with phi = 1/2."""
    return ModelParams.build(theta.alpha, np.full((theta.p, 2), 0.5), np.stack([theta.q[0], theta.q[0]]))


def test_complete_loglik_without_jumps(two_regime):
    stats = PathStats.create([1, 0], [[0, 0], [0, 0]], [4.0, 0.0], 4.0)
    for m in range(2):
        expected = np.log(two_regime.phi[0, m]) - 4.0 * two_regime.q[m, 0, 1]
        assert np.isclose(complete_loglik(stats, m, two_regime), expected, rtol=1e-14)


def test_complete_loglik_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(10):
        theta = random_params(rng, 3, 2)
        for stats in paths_of(draw_sample(theta, 5, seed=int(rng.integers(1000)))):
            for m in range(2):
                assert np.isclose(complete_loglik(stats, m, theta), brute_force_loglik(stats, m, theta), rtol=1e-12)


def test_single_regime_is_plain_markov(ctmc):
    sample = draw_sample(ctmc, 10)
    for stats in paths_of(sample):
        assert np.isclose(complete_loglik(stats, 0, ctmc), brute_force_loglik(stats, 0, ctmc), rtol=1e-12)
        assert np.array_equal(posterior_weights(stats, ctmc), [1.0])
    total = sum(complete_loglik(stats, 0, ctmc) for stats in paths_of(sample))
    assert np.isclose(observed_loglik(sample, ctmc), total, rtol=1e-12)


def test_identical_regimes_split_evenly(two_regime, small_sample):
    theta = symmetric(two_regime)
    assert np.allclose(posterior_matrix(small_sample, theta), 0.5, atol=1e-12)
    ws = weighted_stats(small_sample, theta)
    assert np.allclose(ws.Bhat[:, 0], ws.Bbar / 2)
    assert np.allclose(ws.Bhat[:, 0], ws.Bhat[:, 1])


def test_identical_regimes_reduce_to_one(two_regime, small_sample):
    single = ModelParams.build(two_regime.alpha, np.ones((2, 1)), two_regime.q[:1])
    assert np.isclose(observed_loglik(small_sample, symmetric(two_regime)), observed_loglik(small_sample, single))


def test_posterior_matches_direct_ratio(truth):
    for stats in paths_of(draw_sample(truth, 20, horizon=3.0, seed=2)):
        f = np.exp([brute_force_loglik(stats, m, truth) for m in range(truth.M)])
        assert np.allclose(posterior_weights(stats, truth), f / f.sum(), rtol=1e-10)
        assert np.isclose(posterior_weights(stats, truth).sum(), 1.0, atol=1e-12)


def test_long_paths_do_not_underflow(two_regime):
    sample = draw_sample(two_regime, 5, horizon=2000.0, seed=1)
    weights = posterior_matrix(sample, two_regime)
    assert np.all(np.isfinite(weights))
    assert np.all(np.isfinite(observed_loglik_per_path(sample, two_regime)))


def test_empty_sample_is_rejected(two_regime):
    with pytest.raises(SampleError):
        observed_loglik([], two_regime)


def test_loglik_ignores_path_order(truth, study_sample):
    order = np.random.default_rng(3).permutation(study_sample.n)
    shuffled = study_sample.subset(order)
    assert np.isclose(observed_loglik(shuffled, truth), observed_loglik(study_sample, truth), rtol=1e-13)


def test_weighted_stats_margins(truth, study_sample):
    ws = weighted_stats(study_sample, truth)
    assert np.allclose(ws.Bhat.sum(axis=1), ws.Bbar, rtol=1e-10)
    assert np.allclose(ws.That.sum(axis=1), study_sample.T.sum(axis=0), rtol=1e-10)
    assert np.allclose(ws.Nhat.sum(axis=2), study_sample.N.sum(axis=0), rtol=1e-10)
    assert (ws.Bhat >= 0).all() and (ws.Nhat >= 0).all() and (ws.That >= 0).all()


def test_weighted_stats_single_regime(ctmc):
    sample = draw_sample(ctmc, 30)
    ws = weighted_stats(sample, ctmc)
    assert np.allclose(ws.Bhat[:, 0], sample.Bbar)
    assert np.allclose(ws.Nhat[:, :, 0], sample.N.sum(axis=0))
    assert np.allclose(ws.That[:, 0], sample.T.sum(axis=0))


def test_score_vanishes_at_markov_mle(ctmc):
    sample = draw_sample(ctmc, 40)
    N, T = sample.N.sum(axis=0), sample.T.sum(axis=0)
    mle = ModelParams.build(ctmc.alpha, ctmc.phi, [N / T[:, None]])
    assert np.allclose(score(sample, mle), 0.0, atol=1e-12)


def test_score_is_gradient_of_loglik():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        p, M = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        truth = random_params(rng, p, M)
        sample = draw_sample(truth, 50, horizon=3.0, seed=int(rng.integers(10_000)))
        theta = random_params(rng, p, M)
        assert np.allclose(score(sample, theta), fd_gradient(sample, theta), rtol=1e-6, atol=1e-8)


def test_path_scores_average_to_score(two_regime, small_sample):
    assert np.allclose(path_scores(small_sample, two_regime).mean(axis=0), score(small_sample, two_regime))


def test_list_and_stacked_samples_agree(two_regime, small_sample):
    assert np.isclose(observed_loglik(paths_of(small_sample), two_regime), observed_loglik(small_sample, two_regime))
    assert isinstance(small_sample, SampleStats)
