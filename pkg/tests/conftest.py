import numdifftools as nd
import numpy as np
import pytest

from incomplete_mle.core.estimators import fit
from incomplete_mle.core.likelihood import observed_loglik
from incomplete_mle.core.simulator import SimConfig, sample_stats, simulate_sample
from incomplete_mle.models.params import ModelParams, SampleStats, pack, worked_example, unpack_raw


def random_params(rng, p, M, low=0.3, high=3.0):
    alpha = rng.dirichlet(np.full(p, 5.0))
    phi = rng.dirichlet(np.full(M, 2.0), size=p)
    q = rng.uniform(low, high, size=(M, p, p))
    return ModelParams.build(alpha, phi, q)


def draw_sample(theta, n, horizon=5.0, seed=0):
    return SampleStats.from_paths(sample_stats(simulate_sample(theta, SimConfig(n, horizon, seed))))


def scaled_loglik(sample, theta):
    """observed_loglik / n as a function of the free parameter values."""
    layout = theta.layout

    def f(values):
        return observed_loglik(sample, unpack_raw(values, layout, theta.alpha)) / sample.n

    return f


def fd_gradient(sample, theta):
    return nd.Gradient(scaled_loglik(sample, theta))(pack(theta).values)


def fd_information(sample, theta):
    return -nd.Hessian(scaled_loglik(sample, theta))(pack(theta).values)


def relative_frobenius(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture
def truth():
    return worked_example()


@pytest.fixture
def two_regime():
    return ModelParams.build(
        [0.5, 0.5],
        [[0.6, 0.4], [0.3, 0.7]],
        [[[-0.5, 0.5], [1.0, -1.0]], [[-3.0, 3.0], [4.0, -4.0]]],
    )


@pytest.fixture
def ctmc():
    return ModelParams.build([0.5, 0.5], [[1.0], [1.0]], [[[-1.0, 1.0], [1.0, -1.0]]])


@pytest.fixture
def small_sample(two_regime):
    return draw_sample(two_regime, 50, horizon=5.0, seed=7)


@pytest.fixture
def two_regime_sample(two_regime):
    return draw_sample(two_regime, 300, horizon=5.0, seed=3)


STUDY_SEEDS = range(11, 61)


@pytest.fixture(scope="session")
def study_case():
    """(seed, sample, MLE) for the first worked-example sample whose EM fit is an interior optimum.

    Some samples of this size put the likelihood maximum on the boundary
    (a switching probability or intensity at zero) where the score does not vanish.
    """
    for seed in STUDY_SEEDS:
        sample = draw_sample(worked_example(), 500, horizon=10.0, seed=seed)
        result = fit(sample, "em", theta0=worked_example(), tol=1e-11, max_iter=50000)
        if result.converged and not result.boundary:
            return seed, sample, result.theta_hat
    pytest.fail(f"no interior maximum for seeds {STUDY_SEEDS.start}..{STUDY_SEEDS.stop - 1}")


@pytest.fixture(scope="session")
def study_seed(study_case):
    return study_case[0]


@pytest.fixture(scope="session")
def study_sample(study_case):
    return study_case[1]


@pytest.fixture(scope="session")
def study_mle(study_case):
    return study_case[2]
