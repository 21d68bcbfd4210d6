"""Complete- and observed-data log-likelihoods, posterior regime weights and scores.

Every function accepts either a list of PathStats or a stacked SampleStats.
Mixture computations stay in the log domain; reductions over paths use
numpy's pairwise summation so results do not depend on thread layout.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from incomplete_mle.models.params import ModelParams, PathStats, SampleStats, as_sample

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class WeightedStats:
    Bhat: np.ndarray  # (p, M)
    Nhat: np.ndarray  # (p, p, M)
    That: np.ndarray  # (p, M)
    Bbar: np.ndarray  # (p,)
    n: int


def _log_rates(theta: ModelParams):
    logq = np.zeros_like(theta.q)
    layout = theta.layout
    logq[:, layout.rows, layout.cols] = np.log(theta.off_diagonal())
    exit_rates = -np.diagonal(theta.q, axis1=1, axis2=2)  # (M, p)
    return logq, exit_rates


def complete_loglik_matrix(sample, theta: ModelParams) -> np.ndarray:
    """log f_c(X^k, Phi^k = m | theta) for every path k and regime m, shape (n, M)."""
    s = as_sample(sample)
    logq, exit_rates = _log_rates(theta)
    return (
        s.B @ np.log(theta.phi)
        + np.einsum("kxy,mxy->km", s.N, logq)
        - s.T @ exit_rates.T
    )


def complete_loglik(stats: PathStats, m: int, theta: ModelParams) -> float:
    """Complete-data log-likelihood of one path under regime index m (0-based)."""
    return float(complete_loglik_matrix([stats], theta)[0, m])


def posterior_matrix(sample, theta: ModelParams) -> np.ndarray:
    return softmax(complete_loglik_matrix(sample, theta), axis=1)


def posterior_weights(stats: PathStats, theta: ModelParams) -> np.ndarray:
    return posterior_matrix([stats], theta)[0]


def observed_loglik_per_path(sample, theta: ModelParams) -> np.ndarray:
    return logsumexp(complete_loglik_matrix(sample, theta), axis=1)


def observed_loglik(sample, theta: ModelParams) -> float:
    return float(np.sum(observed_loglik_per_path(sample, theta)))


def weighted_stats_from_weights(sample, weights: np.ndarray) -> WeightedStats:
    s = as_sample(sample)
    return WeightedStats(
        Bhat=np.einsum("kx,km->xm", s.B, weights),
        Nhat=np.einsum("kxy,km->xym", s.N, weights),
        That=np.einsum("kx,km->xm", s.T, weights),
        Bbar=s.Bbar,
        n=s.n,
    )


def weighted_stats(sample, theta: ModelParams) -> WeightedStats:
    s = as_sample(sample)
    return weighted_stats_from_weights(s, posterior_matrix(s, theta))


def score_from_weighted(ws: WeightedStats, theta: ModelParams) -> np.ndarray:
    layout = theta.layout
    phi = theta.phi
    phi_part = ws.Bhat[:, :-1] / phi[:, :-1] - (ws.Bhat[:, -1] / phi[:, -1])[:, None]
    Nhat = np.moveaxis(ws.Nhat, -1, 0)[:, layout.rows, layout.cols]  # (M, p(p-1))
    That = ws.That.T[:, layout.rows]
    q_part = Nhat / theta.off_diagonal() - That
    return np.concatenate([phi_part.ravel(), q_part.ravel()]) / ws.n


def score(sample, theta: ModelParams) -> np.ndarray:
    """S_n(theta): average observed-data score, in FreeParamVector order."""
    return score_from_weighted(weighted_stats(sample, theta), theta)


def complete_scores(sample, theta: ModelParams) -> np.ndarray:
    """Complete-data score of every path under every regime, shape (n, M, d)."""
    s = as_sample(sample)
    layout = theta.layout
    p, M, P = theta.p, theta.M, layout.n_q
    phi = theta.phi

    picks = np.eye(M)[:, : M - 1]  # [regime, m] = 1 if regime == m
    last = (np.arange(M) == M - 1).astype(float)
    per_regime = picks[:, None, :] / phi[None, :, :-1] - last[:, None, None] / phi[None, :, -1:]
    phi_scores = s.B[:, None, :, None] * per_regime[None]  # (n, M, p, M-1)

    qoff = theta.off_diagonal()
    a = (s.N[:, layout.rows, layout.cols][:, None, :] - qoff[None] * s.T[:, layout.rows][:, None, :]) / qoff[None]
    q_scores = np.zeros((s.n, M, M, P))
    regimes = np.arange(M)
    q_scores[:, regimes, regimes, :] = a

    return np.concatenate(
        [phi_scores.reshape(s.n, M, p * (M - 1)), q_scores.reshape(s.n, M, M * P)], axis=2
    )


def path_scores(sample, theta: ModelParams) -> np.ndarray:
    """Observed-data score of each path, E[d log f_c | X^k], shape (n, d)."""
    s = as_sample(sample)
    return np.einsum("km,kmi->ki", posterior_matrix(s, theta), complete_scores(s, theta))
