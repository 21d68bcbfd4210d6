"""EM, EM-Gradient and Fisher-scoring fits, and the repeated-sampling M-estimator."""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from incomplete_mle.core.information import (
    JxParts,
    jx_parts,
    jy,
    jy_inverse,
    sample_null_space,
    sandwich,
)
from incomplete_mle.core.likelihood import observed_loglik, score, weighted_stats
from incomplete_mle.core.simulator import SimConfig, sample_stats, simulate_sample
from incomplete_mle.exceptions import (
    DegenerateRegimeError,
    IncompleteMLEError,
    ParameterValidationError,
    ReplicateError,
    SampleError,
    SingularInformationError,
    StepHalvingError,
)
from incomplete_mle.models.params import (
    FreeParamVector,
    ModelParams,
    SampleStats,
    as_sample,
    canonicalize,
    pack,
    unpack,
    unpack_raw,
    validate,
)

logger = logging.getLogger(__name__)

T_FLOOR = 1e-12
PHI_FLOOR = 1e-12
FLOOR_PATIENCE = 5
BOUNDARY_TOL = 1e-6
MAX_HALVINGS = 30
MONOTONE_SLACK = 1e-10


class Method(str, Enum):
    EM = "em"
    EM_GRADIENT = "em-gradient"
    FISHER_SCORING = "fisher-scoring"


DEFAULT_MAX_ITER = {Method.EM: 2000, Method.EM_GRADIENT: 200, Method.FISHER_SCORING: 200}


@dataclass
class FitResult:
    theta_hat: ModelParams
    iterations: int
    loglik_trace: List[float]
    error_trace: List[float]
    converged: bool
    method: Method
    boundary: bool = False

    @property
    def monotone(self) -> bool:
        trace = self.loglik_trace
        return all(b >= a - MONOTONE_SLACK * abs(a) for a, b in zip(trace, trace[1:]))

    @property
    def status(self) -> str:
        if self.boundary:
            return "stopped on the boundary"
        return "converged" if self.converged else "did not converge"


@dataclass(frozen=True)
class FitConfig:
    method: Method = Method.EM
    tol: float = 1e-8
    max_iter: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))


def on_boundary(theta: ModelParams, tol: float = BOUNDARY_TOL) -> bool:
    """True when some phi[x, m] is below ``tol``, or some intensity is below ``tol`` times its regime's largest."""
    if theta.phi.min() < tol:
        return True
    qoff = theta.off_diagonal()
    return bool(np.any(qoff < tol * qoff.max(axis=1, keepdims=True)))


def initial_guess(sample, M: int) -> ModelParams:
    """Pooled Markov rates spread across regimes by fixed factors; uniform phi."""
    s = as_sample(sample)
    p = s.p
    N = s.N.sum(axis=0)
    T = s.T.sum(axis=0)
    for x in range(p):
        if T[x] <= 0 and N[x].sum() == 0:
            raise SampleError(
                f"state {x + 1} is never visited; use a longer horizon or more paths"
            )
        for y in range(p):
            if y != x and N[x, y] == 0:
                raise SampleError(
                    f"transition {x + 1}->{y + 1} is never observed; use a longer horizon or more paths"
                )
    pooled = N / T[:, None]
    factors = 1.0 + 0.5 * (np.arange(1, M + 1) - (M + 1) / 2.0) / M
    q = factors[:, None, None] * pooled[None]
    phi = np.full((p, M), 1.0 / M)
    return ModelParams.build(s.Bbar / s.n, phi, q)


def _em_update(s: SampleStats, theta: ModelParams):
    ws = weighted_stats(s, theta)
    for x in np.flatnonzero(ws.Bbar <= 0):
        raise SampleError(f"no path starts in state {x + 1}; phi[{x + 1},.] is not identified")
    That = ws.That
    t_floored = That < T_FLOOR
    if t_floored.any():
        regimes = sorted({int(m) + 1 for m in np.nonzero(t_floored)[1]})
        logger.warning("weighted occupation time floored for regime(s) %s", regimes)
        That = np.where(t_floored, T_FLOOR, That)
    phi = ws.Bhat / ws.Bbar[:, None]
    phi_floored = phi < PHI_FLOOR
    if phi_floored.any():
        cells = ", ".join(f"phi[{x + 1},{m + 1}]" for x, m in zip(*np.nonzero(phi_floored)))
        logger.warning("regime-switching probability floored: %s", cells)
        phi = np.where(phi_floored, PHI_FLOOR, phi)
        phi = phi / phi.sum(axis=1, keepdims=True)
    q = np.moveaxis(ws.Nhat / That[:, None, :], -1, 0)
    try:
        theta_new = ModelParams.build(ws.Bbar / ws.n, phi, q)
    except ParameterValidationError as exc:
        raise DegenerateRegimeError(f"EM update left the parameter space: {exc}") from exc
    return theta_new, bool(t_floored.any() or phi_floored.any())


def em_step(sample, theta: ModelParams) -> ModelParams:
    """phi <- B-hat / B-bar, q <- N-hat / T-hat, weights at theta."""
    return _em_update(as_sample(sample), theta)[0]


def _additive_update(sample: SampleStats, theta: ModelParams, delta: np.ndarray) -> ModelParams:
    """theta + delta / 2^k for the smallest k that is valid and does not lower the log-likelihood."""
    start = pack(theta)
    floor = observed_loglik(sample, theta)
    floor -= MONOTONE_SLACK * abs(floor)
    step = np.array(delta, dtype=float)
    for halving in range(MAX_HALVINGS + 1):
        candidate = unpack_raw(start.values + step, start.layout, theta.alpha)
        if not validate(candidate):
            candidate = canonicalize(candidate)
            if not validate(candidate) and observed_loglik(sample, candidate) >= floor:
                if halving:
                    logger.debug("step accepted after %d halvings", halving)
                return candidate
        step = step / 2.0
    raise StepHalvingError(
        f"no valid update that keeps the log-likelihood from decreasing after {MAX_HALVINGS} halvings"
    )


def em_gradient_step(sample, theta: ModelParams) -> ModelParams:
    """theta + J_x^{-1} S_n, with J_x inverted in closed form."""
    s = as_sample(sample)
    return _additive_update(s, theta, jx_parts(s, theta).inverse() @ score(s, theta))


def fisher_scoring_step(sample, theta: ModelParams) -> ModelParams:
    """theta + J_y^{-1} S_n.

    Where J_y^{-1} S_n is not an ascent direction (J_y indefinite away from
    the maximum) the step falls back to J_x^{-1} S_n.
    """
    s = as_sample(sample)
    gradient = score(s, theta)
    try:
        jx_inv = jx_parts(s, theta).inverse()
    except SingularInformationError:
        jx_inv = None
    try:
        direction = jy_inverse(jy(s, theta), jx_inv) @ gradient
    except SingularInformationError:
        direction = None
    if direction is None or not gradient @ direction > 0:
        logger.debug("J_y^-1 S_n is not an ascent direction; taking the EM-gradient step")
        direction = gradient if jx_inv is None else jx_inv @ gradient
    return _additive_update(s, theta, direction)


def fit(
    sample,
    method: Method = Method.EM,
    theta0: Optional[ModelParams] = None,
    tol: float = 1e-8,
    max_iter: Optional[int] = None,
    M: Optional[int] = None,
) -> FitResult:
    """Iterate the chosen update until the sup-norm parameter change drops below ``tol``.

    A fit that stays on the boundary of the parameter space (see
    ``on_boundary``) for FLOOR_PATIENCE iterations stops there and is
    reported with ``boundary=True`` and ``converged=False``.
    """
    s = as_sample(sample)
    method = Method(method)
    if theta0 is None:
        if M is None:
            raise ValueError("either theta0 or the number of regimes M is required")
        theta0 = initial_guess(s, M)
    max_iter = DEFAULT_MAX_ITER[method] if max_iter is None else max_iter

    theta = theta0
    current = pack(theta).values
    loglik_trace = [observed_loglik(s, theta)]
    error_trace = []
    converged = False
    floor_streak = 0
    boundary_streak = 0
    for iteration in range(1, max_iter + 1):
        if method is Method.EM:
            theta_new, floored = _em_update(s, theta)
            floor_streak = floor_streak + 1 if floored else 0
            if floor_streak >= FLOOR_PATIENCE:
                raise DegenerateRegimeError(
                    f"a regime has been floored for {FLOOR_PATIENCE} iterations; regime labels are degenerate"
                )
        elif method is Method.EM_GRADIENT:
            theta_new = em_gradient_step(s, theta)
        else:
            theta_new = fisher_scoring_step(s, theta)

        new = pack(theta_new).values
        error = float(np.abs(new - current).max())
        loglik = observed_loglik(s, theta_new)
        if method is Method.EM and loglik < loglik_trace[-1] - MONOTONE_SLACK * abs(loglik_trace[-1]):
            logger.warning(
                "EM log-likelihood decreased at iteration %d: %.17g -> %.17g", iteration, loglik_trace[-1], loglik
            )
        logger.debug("%s iteration %d: loglik %.10f, step %.3e", method.value, iteration, loglik, error)
        loglik_trace.append(loglik)
        error_trace.append(error)
        theta, current = theta_new, new
        if error < tol:
            converged = True
            break
        boundary_streak = boundary_streak + 1 if on_boundary(theta) else 0
        if boundary_streak >= FLOOR_PATIENCE:
            break

    boundary = on_boundary(theta)
    if boundary:
        converged = False
        logger.warning(
            "%s stopped on the boundary of the parameter space after %d iterations (min phi %.3e)",
            method.value,
            len(error_trace),
            theta.phi.min(),
        )
    elif not converged:
        logger.warning("%s did not converge in %d iterations", method.value, max_iter)
    return FitResult(
        theta_hat=theta,
        iterations=len(error_trace),
        loglik_trace=loglik_trace,
        error_trace=error_trace,
        converged=converged,
        method=method,
        boundary=boundary,
    )


def align_regimes(theta: ModelParams, reference: ModelParams):
    """Relabel regimes of ``theta`` to be closest to ``reference``; returns (theta, perm)."""
    if theta.M > 5:
        logger.warning("exhaustive regime alignment over %d! permutations", theta.M)
    best, best_perm = None, None
    for perm in itertools.permutations(range(theta.M)):
        perm = list(perm)
        distance = np.sum((theta.phi[:, perm] - reference.phi) ** 2) + np.sum((theta.q[perm] - reference.q) ** 2)
        if best is None or distance < best:
            best, best_perm = distance, perm
    if best_perm == list(range(theta.M)):
        return theta, best_perm
    return theta.permute_regimes(best_perm), best_perm


def complete_data_mle(sample, regimes: Sequence[int], M: int) -> ModelParams:
    """MLE when the hidden regime labels (1-based) are revealed."""
    s = as_sample(sample)
    onehot = np.eye(M)[np.asarray(regimes) - 1]
    Bhat = s.B.T @ onehot
    Nhat = np.einsum("kxy,km->mxy", s.N, onehot)
    That = s.T.T @ onehot
    phi = Bhat / s.Bbar[:, None]
    q = Nhat / That.T[:, :, None]
    return ModelParams.build(s.Bbar / s.n, phi, q)


def replicate_seed(seed: int, replicate: int) -> int:
    state = np.random.SeedSequence(int(seed), spawn_key=(int(replicate),)).generate_state(1, np.uint64)
    return int(state[0])


@dataclass
class MEstimatorResult:
    theta_bar: FreeParamVector
    theta0_estimates: List[FreeParamVector]
    jx_bar: np.ndarray
    jy_bar: np.ndarray
    sigma_n: np.ndarray
    jx_bar_inv: np.ndarray
    mle_estimates: List[FreeParamVector]
    mle_jx_bar: np.ndarray
    mle_jx_bar_inv: np.ndarray
    mle_jy_bar: np.ndarray
    n: int
    null_basis: np.ndarray = field(repr=False, default=None)
    fits: List[FitResult] = field(default_factory=list)
    samples: List[SampleStats] = field(default_factory=list)
    replicates: List[int] = field(default_factory=list)
    boundary: List[int] = field(default_factory=list)

    @property
    def K(self):
        return len(self.theta0_estimates)

    def inverse_null_basis(self) -> np.ndarray:
        """Null space of J_y^{-1} - J_x^{-1} and of J_x^{-1} - Sigma_n: the image of ``null_basis`` under J_x."""
        return self.jx_bar @ self.null_basis


def _one_step(sample: SampleStats, theta_bar: ModelParams, kind: str):
    parts = jx_parts(sample, theta_bar)
    if kind == "em_step":
        estimate = pack(em_step(sample, theta_bar)).values
    elif kind == "one_step":
        estimate = pack(theta_bar).values + parts.inverse() @ score(sample, theta_bar)
    else:
        raise ValueError(f"unknown M-estimate kind {kind!r}")
    return estimate, parts, jy(sample, theta_bar)


def m_estimator_pipeline(
    theta_true: Optional[ModelParams],
    K: int,
    sim_config: Optional[SimConfig],
    fit_config: FitConfig,
    M: Optional[int] = None,
    samples: Optional[Sequence] = None,
    threads: Optional[int] = None,
    m_estimate_kind: str = "one_step",
) -> MEstimatorResult:
    """Fit K independent samples, average the MLEs, then take the one-step M-estimate of each sample.

    Replicates whose fit stopped on the boundary of the parameter space are
    left out of every average unless all of them did.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if samples is None:
        if theta_true is None or sim_config is None:
            raise ValueError("samples must be given when no true parameters are supplied")

        def draw(k):
            config = SimConfig(sim_config.n_paths, sim_config.horizon, replicate_seed(sim_config.seed, k))
            return SampleStats.from_paths(sample_stats(simulate_sample(theta_true, config)))

        samples = _map(draw, range(K), threads)
    else:
        samples = [as_sample(sample) for sample in samples]
        if len(samples) != K:
            raise ValueError(f"expected {K} samples, got {len(samples)}")
    M = theta_true.M if theta_true is not None else M
    if M is None:
        raise ValueError("number of regimes M is required")

    def fit_one(k):
        try:
            result = fit(samples[k], fit_config.method, tol=fit_config.tol, max_iter=fit_config.max_iter, M=M)
        except IncompleteMLEError as exc:
            raise ReplicateError(k, exc) from exc
        logger.info(
            "replicate %d: %s %s after %d iterations, loglik %.6f",
            k,
            fit_config.method.value,
            result.status,
            result.iterations,
            result.loglik_trace[-1],
        )
        return result

    fits = _map(fit_one, range(K), threads)

    boundary = [k for k, result in enumerate(fits) if result.boundary]
    replicates = [k for k in range(K) if k not in boundary]
    if boundary and replicates:
        logger.warning(
            "replicate(s) %s stopped on the boundary of the parameter space and are left out of the tables",
            boundary,
        )
    elif boundary:
        logger.warning("every replicate stopped on the boundary of the parameter space; keeping all of them")
        replicates = list(range(K))
    used = [samples[k] for k in replicates]

    reference = theta_true if theta_true is not None else fits[replicates[0]].theta_hat
    mle_thetas = [align_regimes(fits[k].theta_hat, reference)[0] for k in replicates]
    mle_estimates = [pack(theta) for theta in mle_thetas]
    layout = mle_estimates[0].layout
    alpha_bar = np.mean([theta.alpha for theta in mle_thetas], axis=0)
    theta_bar = unpack(
        FreeParamVector(values=np.mean([v.values for v in mle_estimates], axis=0), layout=layout), alpha_bar
    )

    def information_at(i):
        try:
            own = (jx_parts(used[i], mle_thetas[i]), jy(used[i], mle_thetas[i]))
            return own, _one_step(used[i], theta_bar, m_estimate_kind)
        except IncompleteMLEError as exc:
            raise ReplicateError(replicates[i], exc) from exc

    evaluated = _map(information_at, range(len(used)), threads)
    mle_jx_mean = JxParts.mean([own[0] for own, _ in evaluated])
    mle_jy_bar = np.mean([own[1] for own, _ in evaluated], axis=0)
    steps = [step for _, step in evaluated]
    theta0_estimates = [FreeParamVector(values=estimate, layout=layout) for estimate, _, _ in steps]
    jx_mean = JxParts.mean([parts for _, parts, _ in steps])
    jy_bar = np.mean([matrix for _, _, matrix in steps], axis=0)
    jx_bar_inv = jx_mean.inverse()

    return MEstimatorResult(
        theta_bar=pack(theta_bar),
        theta0_estimates=theta0_estimates,
        jx_bar=jx_mean.matrix(),
        jy_bar=jy_bar,
        sigma_n=sandwich(jx_bar_inv, jy_bar),
        jx_bar_inv=jx_bar_inv,
        mle_estimates=mle_estimates,
        mle_jx_bar=mle_jx_mean.matrix(),
        mle_jx_bar_inv=mle_jx_mean.inverse(),
        mle_jy_bar=mle_jy_bar,
        n=used[0].n,
        null_basis=sample_null_space(used, theta_bar),
        fits=fits,
        samples=used,
        replicates=replicates,
        boundary=boundary,
    )


def _map(function, items, threads):
    items = list(items)
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(function, items))
    return [function(item) for item in items]
