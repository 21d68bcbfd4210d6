"""Parameter space of the regime-switching conditional Markov jump process.

A model has p states and M regimes. The free parameters are the regime
switching probabilities phi[x, m] for m < M followed by the off-diagonal
intensities q[xy, m], grouped by regime and row-major inside a regime.
The initial distribution alpha is carried along but never estimated
jointly with the rest.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

from incomplete_mle.exceptions import ParameterValidationError, SampleError

SIMPLEX_TOL = 1e-10


def _frozen(array, dtype=float):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _last_phi(phi_free):
    # phi[x, M] = 1 - sum_{m<M} phi[x, m]; shared by pack/unpack and canonicalize
    return 1.0 - phi_free.sum(axis=1)


def _diagonal(q):
    off = q.copy()
    idx = np.arange(q.shape[-1])
    off[..., idx, idx] = 0.0
    return -off.sum(axis=-1)


@dataclass(frozen=True)
class ParamEntry:
    kind: str  # "phi" or "q"
    x: int
    m: int
    y: Optional[int] = None

    @property
    def label(self):
        if self.kind == "phi":
            return f"phi[{self.x + 1},{self.m + 1}]"
        return f"q[{self.x + 1}{self.y + 1},{self.m + 1}]"


@dataclass(frozen=True)
class ParamLayout:
    p: int
    M: int
    entries: tuple

    @property
    def d(self):
        return len(self.entries)

    @property
    def n_phi(self):
        return self.p * (self.M - 1)

    @property
    def n_q(self):
        """Number of off-diagonal intensities per regime."""
        return self.p * (self.p - 1)

    @property
    def labels(self):
        return [entry.label for entry in self.entries]

    @property
    def rows(self):
        return np.array([x for x in range(self.p) for y in range(self.p) if y != x])

    @property
    def cols(self):
        return np.array([y for x in range(self.p) for y in range(self.p) if y != x])

    def phi_index(self, x, m):
        if not 0 <= m < self.M - 1:
            raise IndexError(f"phi[{x + 1},{m + 1}] is not a free parameter")
        return x * (self.M - 1) + m

    def q_index(self, x, y, m):
        if x == y:
            raise IndexError("diagonal intensities are not free parameters")
        return self.n_phi + m * self.n_q + x * (self.p - 1) + (y if y < x else y - 1)


@lru_cache(maxsize=None)
def layout_for(p: int, M: int) -> ParamLayout:
    entries = [ParamEntry("phi", x, m) for x in range(p) for m in range(M - 1)]
    entries += [
        ParamEntry("q", x, m, y)
        for m in range(M)
        for x in range(p)
        for y in range(p)
        if y != x
    ]
    return ParamLayout(p=p, M=M, entries=tuple(entries))


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Full parameter set (alpha, phi, Q_1..Q_M). Arrays are read-only."""

    alpha: np.ndarray
    phi: np.ndarray
    q: np.ndarray

    @property
    def p(self):
        return self.alpha.shape[0]

    @property
    def M(self):
        return self.phi.shape[1]

    @property
    def layout(self):
        return layout_for(self.p, self.M)

    @classmethod
    def build(cls, alpha, phi, q, *, strict=True):
        """Construct validated, canonical parameters.

        Simplex rows within tolerance are renormalised, phi[x, M] and the
        diagonal of every Q_m are rebuilt from the free entries. With
        ``strict`` a violation raises ParameterValidationError.
        """
        alpha = np.asarray(alpha, dtype=float)
        phi = np.asarray(phi, dtype=float)
        q = np.asarray(q, dtype=float)
        if phi.ndim == 2 and q.ndim == 3 and q.shape[1:] == q.shape[1:][::-1]:
            q = q.copy()
            idx = np.arange(q.shape[-1])
            q[:, idx, idx] = _diagonal(q)
        raw = cls(alpha=_frozen(alpha), phi=_frozen(phi), q=_frozen(q))
        violations = validate(raw)
        if violations:
            if strict:
                raise ParameterValidationError(violations)
            return raw
        theta = canonicalize(raw)
        # rebuilding phi[x, M] from the other entries can round a tiny value to zero
        violations = validate(theta)
        if violations and strict:
            raise ParameterValidationError(violations)
        return theta

    def regime_probabilities(self):
        """p_m = P(Phi = m) = sum_x alpha_x phi[x, m]."""
        return self.alpha @ self.phi

    def permute_regimes(self, perm: Sequence[int]) -> "ModelParams":
        perm = list(perm)
        return canonicalize(
            ModelParams(alpha=self.alpha, phi=_frozen(self.phi[:, perm]), q=_frozen(self.q[perm]))
        )

    def same_as(self, other: "ModelParams") -> bool:
        return (
            np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.phi, other.phi)
            and np.array_equal(self.q, other.q)
        )

    def off_diagonal(self):
        """Array of shape (M, p(p-1)) with the free intensities of each regime."""
        layout = self.layout
        return self.q[:, layout.rows, layout.cols]


def canonicalize(theta: ModelParams) -> ModelParams:
    alpha = theta.alpha / theta.alpha.sum()
    phi = np.array(theta.phi, dtype=float)
    phi[:, -1] = _last_phi(phi[:, :-1])
    q = np.array(theta.q, dtype=float)
    idx = np.arange(theta.p)
    q[:, idx, idx] = _diagonal(q)
    return ModelParams(alpha=_frozen(alpha), phi=_frozen(phi), q=_frozen(q))


def validate(theta: ModelParams) -> list:
    """Return the list of violated invariants; empty means valid."""
    violations = []
    alpha, phi, q = np.asarray(theta.alpha), np.asarray(theta.phi), np.asarray(theta.q)
    if alpha.ndim != 1 or alpha.shape[0] < 2:
        return ["p must be at least 2 (alpha must have one entry per state)"]
    p = alpha.shape[0]
    if phi.ndim != 2 or phi.shape[0] != p or phi.shape[1] < 1:
        return [f"phi must have shape ({p}, M) with M >= 1, got {phi.shape}"]
    M = phi.shape[1]
    if q.shape != (M, p, p):
        return [f"Q must hold {M} matrices of shape ({p}, {p}), got {q.shape}"]
    for name, arr in (("alpha", alpha), ("phi", phi), ("Q", q)):
        if not np.all(np.isfinite(arr)):
            violations.append(f"{name} contains non-finite values")
    if violations:
        return violations

    if np.any(alpha < 0):
        violations.append("alpha must be nonnegative")
    if abs(alpha.sum() - 1.0) > SIMPLEX_TOL:
        violations.append(f"alpha sums to {alpha.sum():.12g}, not 1")
    for x in range(p):
        if abs(phi[x].sum() - 1.0) > SIMPLEX_TOL:
            violations.append(f"phi row {x + 1} sums to {phi[x].sum():.12g}, not 1")
        for m in range(M):
            if phi[x, m] <= 0:
                violations.append(f"phi[{x + 1},{m + 1}] must be strictly positive")
    for m in range(M):
        for x in range(p):
            row_out = 0.0
            for y in range(p):
                if y == x:
                    continue
                row_out += q[m, x, y]
                if q[m, x, y] <= 0:
                    violations.append(f"q[{x + 1}{y + 1},{m + 1}] must be strictly positive")
            if abs(q[m, x, x] + row_out) > SIMPLEX_TOL * (1.0 + row_out):
                violations.append(f"q[{x + 1}{x + 1},{m + 1}] must equal minus the row sum")
    return violations


@dataclass(frozen=True, eq=False)
class FreeParamVector:
    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        if self.values.shape != (self.layout.d,):
            raise ValueError(f"expected {self.layout.d} values, got shape {self.values.shape}")

    @property
    def labels(self):
        return self.layout.labels

    def replace(self, values) -> "FreeParamVector":
        return FreeParamVector(values=_frozen(values), layout=self.layout)


def pack(theta: ModelParams) -> FreeParamVector:
    violations = validate(theta)
    if violations:
        raise ParameterValidationError(violations)
    layout = theta.layout
    values = np.concatenate([theta.phi[:, :-1].ravel(), theta.off_diagonal().ravel()])
    return FreeParamVector(values=_frozen(values), layout=layout)


def unpack_raw(values, layout: ParamLayout, alpha) -> ModelParams:
    """Rebuild parameters from free values without validating them."""
    values = np.asarray(values, dtype=float)
    p, M = layout.p, layout.M
    phi = np.empty((p, M))
    phi[:, :-1] = values[: layout.n_phi].reshape(p, M - 1)
    phi[:, -1] = _last_phi(phi[:, :-1])
    q = np.zeros((M, p, p))
    q[:, layout.rows, layout.cols] = values[layout.n_phi :].reshape(M, layout.n_q)
    idx = np.arange(p)
    q[:, idx, idx] = _diagonal(q)
    return ModelParams(alpha=_frozen(alpha), phi=_frozen(phi), q=_frozen(q))


def unpack(vector: FreeParamVector, alpha) -> ModelParams:
    theta = unpack_raw(vector.values, vector.layout, alpha)
    violations = validate(theta)
    if violations:
        raise ParameterValidationError(violations)
    return theta


@dataclass(frozen=True, eq=False)
class PathStats:
    """Sufficient statistics of one observed path."""

    B: np.ndarray
    N: np.ndarray
    T: np.ndarray
    horizon: float

    def __post_init__(self):
        p = self.B.shape[0]
        if self.N.shape != (p, p) or self.T.shape != (p,):
            raise SampleError("inconsistent shapes in path statistics")
        if self.B.sum() != 1 or not np.all((self.B == 0) | (self.B == 1)):
            raise SampleError("exactly one initial-state indicator must be set")
        if np.any(np.diag(self.N) != 0) or np.any(self.N < 0):
            raise SampleError("transition counts must be nonnegative with zero diagonal")
        if np.any(self.T < 0) or not self.horizon > 0:
            raise SampleError("occupation times must be nonnegative and horizon positive")
        if abs(self.T.sum() - self.horizon) > 1e-12 * self.horizon:
            raise SampleError(f"occupation times sum to {self.T.sum()!r}, horizon is {self.horizon!r}")
        if np.any((self.N.sum(axis=1) > 0) & (self.T <= 0)):
            raise SampleError("a state with outgoing transitions has zero occupation time")

    @classmethod
    def create(cls, B, N, T, horizon):
        return cls(
            B=_frozen(B, dtype=np.int64),
            N=_frozen(N, dtype=np.int64),
            T=_frozen(T),
            horizon=float(horizon),
        )

    @property
    def p(self):
        return self.B.shape[0]


@dataclass(frozen=True, eq=False)
class SampleStats:
    """Per-path statistics stacked into arrays of shape (n, p), (n, p, p), (n, p)."""

    B: np.ndarray
    N: np.ndarray
    T: np.ndarray

    @property
    def n(self):
        return self.B.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    @classmethod
    def from_paths(cls, stats: Iterable[PathStats]) -> "SampleStats":
        stats = list(stats)
        if not stats:
            raise SampleError("sample is empty")
        return cls(
            B=_frozen([s.B for s in stats]),
            N=_frozen([s.N for s in stats]),
            T=_frozen([s.T for s in stats]),
        )

    def subset(self, index) -> "SampleStats":
        index = np.atleast_1d(index)
        return SampleStats(B=_frozen(self.B[index]), N=_frozen(self.N[index]), T=_frozen(self.T[index]))

    @property
    def Bbar(self):
        return self.B.sum(axis=0)


def as_sample(sample) -> SampleStats:
    if isinstance(sample, SampleStats):
        if sample.n == 0:
            raise SampleError("sample is empty")
        return sample
    return SampleStats.from_paths(sample)


def worked_example() -> ModelParams:
    """Three states, three regimes: the truth of the simulation study."""
    alpha = np.full(3, 1.0 / 3.0)
    phi = np.array([[0.5, 0.3, 0.2], [0.25, 0.55, 0.2], [0.6, 0.1, 0.3]])
    q = np.array(
        [
            [[-2.0, 1.2, 0.8], [0.2, -0.4, 0.2], [1.2, 1.8, -3.0]],
            [[-3.0, 2.4, 0.6], [0.2, -0.4, 0.2], [0.4, 1.6, -2.0]],
            [[-4.0, 1.6, 2.4], [0.2, -0.4, 0.2], [3.0, 2.0, -5.0]],
        ]
    )
    return ModelParams.build(alpha, phi, q)
