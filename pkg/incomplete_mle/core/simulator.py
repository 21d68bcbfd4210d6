"""Sample paths of the regime-switching process and their sufficient statistics.

Randomness comes from numpy's Philox counter-based generator. Path i of a
sample seeded with s draws from the substream SeedSequence(s, spawn_key=(i,)),
so a sample is the same however its paths are scheduled.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from incomplete_mle.exceptions import ConfigError, ParameterValidationError
from incomplete_mle.models.params import ModelParams, PathStats, validate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Path:
    """One observed trajectory. ``regime`` is the hidden label, kept for tests only."""

    events: tuple  # ((state, entry_time), ...) with 1-based states
    regime: int
    horizon: float
    p: int

    @property
    def n_jumps(self):
        return len(self.events) - 1


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    horizon: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n_paths) < 1:
            raise ConfigError(f"n_paths must be at least 1, got {self.n_paths}")
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if int(self.seed) < 0:
            raise ConfigError("seed must be a nonnegative integer")


def path_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def _exponential(rng, rate):
    # inverse CDF of a uniform draw; 1 - U lies in (0, 1]
    return -math.log1p(-rng.random()) / rate


def simulate_path(theta: ModelParams, horizon: float, rng: np.random.Generator) -> Path:
    violations = validate(theta)
    if violations:
        raise ParameterValidationError(violations)
    p, M = theta.p, theta.M
    state = int(rng.choice(p, p=theta.alpha))
    regime = int(rng.choice(M, p=theta.phi[state]))
    Q = theta.q[regime]

    events = [(state + 1, 0.0)]
    t = 0.0
    while True:
        rate = -Q[state, state]
        t += _exponential(rng, rate)
        if t >= horizon:
            break
        jump = Q[state].copy()
        jump[state] = 0.0
        state = int(rng.choice(p, p=jump / rate))
        events.append((state + 1, t))
    return Path(events=tuple(events), regime=regime + 1, horizon=float(horizon), p=p)


def simulate_sample(theta: ModelParams, config: SimConfig, threads: Optional[int] = None) -> List[Path]:
    def one(index):
        return simulate_path(theta, config.horizon, path_rng(config.seed, index))

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            paths = list(pool.map(one, range(config.n_paths)))
    else:
        paths = [one(i) for i in range(config.n_paths)]
    logger.debug("simulated %d paths (seed=%d, horizon=%g)", len(paths), config.seed, config.horizon)
    return paths


def path_stats(path: Path) -> PathStats:
    p = path.p
    B = np.zeros(p, dtype=np.int64)
    N = np.zeros((p, p), dtype=np.int64)
    T = np.zeros(p)
    states = [s - 1 for s, _ in path.events]
    times = [t for _, t in path.events] + [path.horizon]
    B[states[0]] = 1
    for i, state in enumerate(states):
        T[state] += times[i + 1] - times[i]
        if i + 1 < len(states):
            N[state, states[i + 1]] += 1
    return PathStats.create(B, N, T, path.horizon)


def sample_stats(paths: List[Path]) -> List[PathStats]:
    return [path_stats(path) for path in paths]
