"""Conditional observed information J_x, observed information J_y and their inverses.

All matrices use the per-path average convention: J = -(1/n) * Hessian of the
summed log-likelihood. Rows and columns follow the FreeParamVector layout.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from incomplete_mle.core.likelihood import (
    WeightedStats,
    complete_scores,
    path_scores,
    posterior_matrix,
    weighted_stats,
    weighted_stats_from_weights,
)
from incomplete_mle.exceptions import (
    LoewnerOrderingError,
    PsiNotConvergedError,
    SingularInformationError,
)
from incomplete_mle.models.params import ModelParams, ParamLayout, as_sample, pack

logger = logging.getLogger(__name__)

LOEWNER_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class JxParts:
    """The pieces that determine J_x.

    Per state x the phi block is diag(d[x]) + beta[x] * 1 1^T, the q block is
    diag(qdiag). J_x is linear in (d, beta, qdiag), so averages of J_x
    matrices are averages of their parts.
    """

    d: np.ndarray  # (p, M-1)
    beta: np.ndarray  # (p,)
    qdiag: np.ndarray  # (M, p(p-1))
    layout: ParamLayout

    def matrix(self) -> np.ndarray:
        layout = self.layout
        out = np.zeros((layout.d, layout.d))
        k = layout.M - 1
        for x in range(layout.p):
            sl = slice(x * k, (x + 1) * k)
            out[sl, sl] = np.diag(self.d[x]) + self.beta[x]
        q = np.arange(layout.n_phi, layout.d)
        out[q, q] = self.qdiag.ravel()
        return out

    def inverse(self) -> np.ndarray:
        """Closed-form inverse: Sherman-Morrison per phi block, reciprocal on the q block."""
        layout = self.layout
        self._check_invertible()
        out = np.zeros((layout.d, layout.d))
        k = layout.M - 1
        for x in range(layout.p):
            sl = slice(x * k, (x + 1) * k)
            dinv = 1.0 / self.d[x]
            beta = self.beta[x]
            denom = 1.0 + beta * dinv.sum()
            out[sl, sl] = np.diag(dinv) - beta * np.outer(dinv, dinv) / denom
        q = np.arange(layout.n_phi, layout.d)
        out[q, q] = 1.0 / self.qdiag.ravel()
        return out

    def _check_invertible(self):
        layout = self.layout
        k = layout.M - 1
        for x in range(layout.p):
            for m in range(k):
                if not self.d[x, m] > 0:
                    raise SingularInformationError(
                        f"weighted initial count for {layout.entries[layout.phi_index(x, m)].label} is zero",
                        label=layout.entries[layout.phi_index(x, m)].label,
                    )
            if k and not self.beta[x] > 0:
                label = f"phi[{x + 1},{layout.M}]"
                raise SingularInformationError(f"weighted initial count for {label} is zero", label=label)
        flat = self.qdiag.ravel()
        for i in np.flatnonzero(~(flat > 0)):
            label = layout.entries[layout.n_phi + i].label
            raise SingularInformationError(f"weighted transition count for {label} is zero", label=label)

    @staticmethod
    def mean(parts: Sequence["JxParts"]) -> "JxParts":
        parts = list(parts)
        return JxParts(
            d=np.mean([part.d for part in parts], axis=0),
            beta=np.mean([part.beta for part in parts], axis=0),
            qdiag=np.mean([part.qdiag for part in parts], axis=0),
            layout=parts[0].layout,
        )


def jx_parts_from_weighted(ws: WeightedStats, theta: ModelParams) -> JxParts:
    layout = theta.layout
    phi = theta.phi
    Nhat = np.moveaxis(ws.Nhat, -1, 0)[:, layout.rows, layout.cols]
    return JxParts(
        d=ws.Bhat[:, :-1] / (ws.n * phi[:, :-1] ** 2),
        beta=ws.Bhat[:, -1] / (ws.n * phi[:, -1] ** 2),
        qdiag=Nhat / (ws.n * theta.off_diagonal() ** 2),
        layout=layout,
    )


def jx_parts(sample, theta: ModelParams) -> JxParts:
    return jx_parts_from_weighted(weighted_stats(sample, theta), theta)


def jx(sample, theta: ModelParams) -> np.ndarray:
    return jx_parts(sample, theta).matrix()


def jx_inverse(sample, theta: ModelParams) -> np.ndarray:
    return jx_parts(sample, theta).inverse()


def complete_information(sample, regimes, theta: ModelParams) -> np.ndarray:
    """Complete-data information when the regime labels (1-based) are revealed."""
    s = as_sample(sample)
    weights = np.eye(theta.M)[np.asarray(regimes) - 1]
    return jx_parts_from_weighted(weighted_stats_from_weights(s, weights), theta).matrix()


def jy(sample, theta: ModelParams) -> np.ndarray:
    """Observed information from the closed-form element expressions.

    Uses Psi[k,x,m] = w_km - (phi_xm / phi_xM) w_kM and
    A[k,m,xy] = N^k_xy - q_xy,m T^k_x.
    """
    s = as_sample(sample)
    layout = theta.layout
    p, M, P, n = theta.p, theta.M, layout.n_q, s.n
    phi = theta.phi
    qoff = theta.off_diagonal()
    W = posterior_matrix(s, theta)
    B = s.B

    a = (s.N[:, layout.rows, layout.cols][:, None, :] - qoff[None] * s.T[:, layout.rows][:, None, :]) / qoff[None]
    psi = W[:, None, : M - 1] - (phi[None, :, :-1] / phi[None, :, -1:]) * W[:, None, -1:]
    psi_scaled = psi / phi[None, :, :-1]

    # phi-phi: block diagonal over x
    phiphi = np.einsum("kx,kxm,kxl->xml", B, psi_scaled, psi_scaled)

    # q-q: the N-hat / q^2 diagonal is added after normalisation, below
    qq = np.zeros((M, P, M, P))
    if M > 1:
        regimes = np.arange(M)
        qq[regimes, :, regimes, :] = -np.einsum("km,kmi,kmj->mij", W, a, a)
        wa = W[:, :, None] * a
        qq += np.einsum("kmi,klj->milj", wa, wa)
    qq = qq.reshape(M * P, M * P)

    # phi-q
    picks = np.eye(M)[: M - 1, :]  # [m, l] = 1 if m == l
    coeff = picks[None, None, :, :] - psi[:, :, :, None]  # (n, p, M-1, M)
    phiq = -np.einsum("kl,kxml,klj,kx->xmlj", W, coeff, a, B) / phi[:, :-1, None, None]
    last = np.einsum("kj,kx->xj", W[:, -1:] * a[:, -1, :], B) / phi[:, -1:]
    phiq[:, :, -1, :] += last[:, None, :]

    d = layout.d
    out = np.zeros((d, d))
    k = M - 1
    for x in range(p):
        sl = slice(x * k, (x + 1) * k)
        out[sl, sl] = phiphi[x]
    out[layout.n_phi :, layout.n_phi :] = qq
    cross = phiq.reshape(p * k, M * P)
    out[: layout.n_phi, layout.n_phi :] = cross
    out[layout.n_phi :, : layout.n_phi] = cross.T
    out /= n
    q = np.arange(layout.n_phi, d)
    out[q, q] += jx_parts_from_weighted(weighted_stats_from_weights(s, W), theta).qdiag.ravel()
    return out


def _complete_neg_hessian(Bw: np.ndarray, Nw: np.ndarray, m: int, theta: ModelParams) -> np.ndarray:
    """-Hessian of sum_k w_k log f_c(X^k, Phi^k = m) from weighted totals Bw (p,), Nw (p, p)."""
    layout = theta.layout
    out = np.zeros((layout.d, layout.d))
    phi = theta.phi
    M = theta.M
    for x in range(theta.p):
        for i in range(M - 1):
            for j in range(M - 1):
                value = 0.0
                if m == M - 1:
                    value += Bw[x] / phi[x, M - 1] ** 2
                if m == i == j:
                    value += Bw[x] / phi[x, i] ** 2
                out[layout.phi_index(x, i), layout.phi_index(x, j)] = value
        for y in range(theta.p):
            if y != x:
                idx = layout.q_index(x, y, m)
                out[idx, idx] = Nw[x, y] / theta.q[m, x, y] ** 2
    return out


def jy_generic(sample, theta: ModelParams) -> np.ndarray:
    """Observed information from conditional moments of the complete-data score.

    E[-H_c | X] - E[s_c s_c^T | X] + E[s_c | X] E[s_c | X]^T, summed over paths.
    """
    s = as_sample(sample)
    W = posterior_matrix(s, theta)
    scores = complete_scores(s, theta)
    expected_hessian = sum(
        _complete_neg_hessian(W[:, m] @ s.B, np.einsum("k,kxy->xy", W[:, m], s.N), m, theta)
        for m in range(theta.M)
    )
    second_moment = np.einsum("km,kmi,kmj->ij", W, scores, scores)
    mean_scores = np.einsum("km,kmi->ki", W, scores)
    return (expected_hessian - second_moment + mean_scores.T @ mean_scores) / s.n


@dataclass
class PsiTrace:
    iterates: List[np.ndarray]
    spectral_radius_estimate: float
    converged: bool
    increment_norms: List[float] = field(default_factory=list)

    @property
    def limit(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def steps(self) -> int:
        return len(self.iterates) - 1

    def min_increment_eigenvalue(self) -> float:
        values = [
            np.linalg.eigvalsh(_symmetrize(after - before)).min()
            for before, after in zip(self.iterates, self.iterates[1:])
        ]
        return float(min(values)) if values else 0.0


def _symmetrize(matrix):
    return (matrix + matrix.T) / 2.0


def loewner_min_eigenvalue(A: np.ndarray, B: np.ndarray) -> float:
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return float(np.linalg.eigvalsh(_symmetrize(A - B)).min())


def _positive_definite(matrix: np.ndarray, threshold: float) -> bool:
    if matrix.shape[0] == 0:
        return True
    try:
        scipy.linalg.cholesky(matrix - threshold * np.eye(matrix.shape[0]), lower=True)
        return True
    except np.linalg.LinAlgError:
        return bool(np.linalg.eigvalsh(matrix).min() > threshold)


def loewner_greater(
    A: np.ndarray, B: np.ndarray, tol: float = LOEWNER_TOL, null_basis: Optional[np.ndarray] = None
) -> bool:
    """True iff A - B is positive definite beyond a tolerance scaled by max|A - B|.

    With ``null_basis`` (d, r) the difference only has to be positive
    semidefinite, and positive definite on the orthogonal complement of
    the span of those columns.
    """
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    diff = _symmetrize(A - B)
    threshold = tol * (1.0 + np.abs(diff).max(initial=0.0))
    if null_basis is None or np.asarray(null_basis).shape[1] == 0:
        return _positive_definite(diff, threshold)
    null_basis = np.asarray(null_basis, dtype=float)
    if null_basis.shape[0] != diff.shape[0]:
        raise ValueError(f"null basis has {null_basis.shape[0]} rows, matrices have {diff.shape[0]}")
    if np.linalg.eigvalsh(diff).min() < -threshold:
        return False
    complement = scipy.linalg.null_space(scipy.linalg.orth(null_basis).T)
    return _positive_definite(complement.T @ diff @ complement, threshold)


def fixed_horizon_null_space(theta: ModelParams, horizon: float) -> np.ndarray:
    """Orthonormal basis of directions v with J_x v = J_y v when every path spans ``horizon``.

    With sum_x T_x fixed, a direction built from r[xy], kappa[m], tau[x] with
    sum_y r[xy] q[xy,m] = kappa[m] + tau[x] gives a complete-data score
    v . s_c(X, m) that does not depend on the regime m, so the conditional
    variance of the score, J_x - J_y, vanishes along v. Generically the
    basis has (p - 1)(p + 1 - M) columns, none when M > p.
    """
    layout = theta.layout
    p, M, P = theta.p, theta.M, layout.n_q
    qoff = theta.off_diagonal()
    system = np.zeros((M * p, P + M + p))
    for m in range(M):
        for x in range(p):
            row = m * p + x
            cols = slice(x * (p - 1), (x + 1) * (p - 1))
            system[row, cols] = qoff[m, cols]
            system[row, P + m] = -1.0
            system[row, P + M + x] = -1.0
    solutions = scipy.linalg.null_space(system)
    directions = np.zeros((layout.d, solutions.shape[1]))
    for j, z in enumerate(solutions.T):
        r, kappa = z[:P], z[P : P + M]
        u = horizon * theta.phi * (kappa[None, :] - (theta.phi @ kappa)[:, None])
        directions[: layout.n_phi, j] = u[:, :-1].ravel()
        directions[layout.n_phi :, j] = (qoff * r[None, :]).ravel()
    # the shift (kappa + c, tau - c) maps to the zero direction; orth drops it
    if not np.abs(directions).max(initial=0.0) > 0:
        return np.zeros((layout.d, 0))
    return scipy.linalg.orth(directions)


def sample_null_space(samples, theta: ModelParams) -> np.ndarray:
    """Null space of J_x - J_y shared by every sample, empty unless all paths have one horizon."""
    horizons = np.concatenate([as_sample(sample).T.sum(axis=1) for sample in samples])
    if np.ptp(horizons) > 1e-9 * horizons.max():
        return np.zeros((theta.layout.d, 0))
    return fixed_horizon_null_space(theta, float(horizons.mean()))


def spectral_radius(jx_inv: np.ndarray, jy: np.ndarray) -> float:
    A = np.eye(jy.shape[0]) - jx_inv @ jy
    return float(np.abs(np.linalg.eigvals(A)).max())


def psi_recursion(
    jx_inv: np.ndarray,
    jy: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 500,
    fixed_iterations: Optional[int] = None,
) -> PsiTrace:
    """Monotone recursion Psi_{l+1} = (I - J_x^{-1} J_y) Psi_l + J_x^{-1}, Psi_0 = 0.

    Requires J_y positive definite and J_x - J_y positive semidefinite. Stops once the next increment would be below ``tol`` in every entry. With
    ``fixed_iterations`` exactly that many steps are taken and nothing is raised.
    """
    d = jy.shape[0]
    jx = np.linalg.inv(jx_inv)
    if not loewner_greater(jy, np.zeros_like(jy)):
        raise LoewnerOrderingError("J_y is not positive definite")
    # J_x = J_y (complete information) is allowed: A = 0 and one step suffices
    gap = loewner_min_eigenvalue(jx, jy)
    if gap < -LOEWNER_TOL * (1.0 + np.abs(jx - jy).max()):
        raise LoewnerOrderingError(f"J_x - J_y is not positive semidefinite (min eigenvalue {gap:.3e})")

    A = np.eye(d) - jx_inv @ jy
    psi = np.zeros((d, d))
    iterates = [psi]
    norms = []
    increment = jx_inv
    converged = False
    steps = fixed_iterations if fixed_iterations is not None else max_iter
    for _ in range(steps):
        psi = psi + increment
        iterates.append(psi)
        norms.append(float(np.linalg.norm(increment)))
        increment = A @ increment
        if np.abs(increment).max() < tol:
            converged = True
            if fixed_iterations is None:
                break

    final_norm = float(np.linalg.norm(increment))
    rate = final_norm / norms[-1] if norms and norms[-1] > 0 else 0.0
    trace = PsiTrace(
        iterates=iterates,
        spectral_radius_estimate=min(rate, np.nextafter(1.0, 0.0)),
        converged=converged,
        increment_norms=norms,
    )
    logger.debug("psi recursion: %d steps, rate %.6f, converged=%s", trace.steps, rate, converged)
    if not converged and fixed_iterations is None:
        raise PsiNotConvergedError(f"psi recursion did not converge in {max_iter} steps", trace)
    return trace


def jy_inverse(jy: np.ndarray, jx_inv: Optional[np.ndarray] = None) -> np.ndarray:
    """J_y^{-1}: Psi recursion when the ordering premise holds, dense solve otherwise."""
    if jx_inv is not None:
        try:
            return psi_recursion(jx_inv, jy).limit
        except (LoewnerOrderingError, PsiNotConvergedError) as exc:
            logger.debug("falling back to dense inverse: %s", exc)
    try:
        return scipy.linalg.solve(jy, np.eye(jy.shape[0]), assume_a="sym")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularInformationError(f"J_y is singular: {exc}") from exc


def sandwich(jx_inv: np.ndarray, jy: np.ndarray) -> np.ndarray:
    """Sigma_n = J_x^{-1} J_y J_x^{-1}."""
    return _symmetrize(jx_inv @ jy @ jx_inv)


def huber_sandwich(sample, theta: ModelParams, jy_inv: Optional[np.ndarray] = None) -> np.ndarray:
    """V_n = J_y^{-1} K_n J_y^{-1} with K_n the average outer product of per-path scores."""
    s = as_sample(sample)
    scores = path_scores(s, theta)
    K = scores.T @ scores / s.n
    if jy_inv is None:
        parts = jx_parts(s, theta)
        try:
            parts_inv = parts.inverse()
        except SingularInformationError:
            parts_inv = None
        jy_inv = jy_inverse(jy(s, theta), parts_inv)
    return _symmetrize(jy_inv @ K @ jy_inv)


@dataclass(frozen=True, eq=False)
class InfoMatrices:
    jx: np.ndarray
    jy: np.ndarray
    at_theta: object  # FreeParamVector
    n: int
    jx_inv: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return sandwich(self.jx_inv, self.jy)


def information_matrices(sample, theta: ModelParams) -> InfoMatrices:
    s = as_sample(sample)
    parts = jx_parts(s, theta)
    return InfoMatrices(jx=parts.matrix(), jy=jy(s, theta), at_theta=pack(theta), n=s.n, jx_inv=parts.inverse())
