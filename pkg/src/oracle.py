"""
Measurement oracles
A stochastic simulator of the noisy device and a replay store over recorded
shots. Both answer vectorized batches of query indices.
"""
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from src.dataset import Dataset
from src.errors import DomainError, ExhaustedQueryError
from src.models import LambdaParams, Query
from src.noise import GaussianReadout, NoiseModel, noisy_probability
from src.query_space import QueryDistribution, QuerySpace
from src.rng import RngStream


class ShotRecord(BaseModel):
    """One single-shot answer: a bit, or a complex readout signal as (re, im)"""
    model_config = ConfigDict(frozen=True)

    query: Query
    y: Optional[int] = None
    signal: Optional[Tuple[float, float]] = None

    @model_validator(mode="after")
    def _one_outcome(self):
        if (self.y is None) == (self.signal is None):
            raise ValueError("a shot carries exactly one of y or signal")
        return self

    @property
    def outcome(self) -> Union[int, complex]:
        return self.y if self.y is not None else complex(*self.signal)


def readout_kind(noise: NoiseModel) -> str:
    return "gaussian" if isinstance(noise.readout, GaussianReadout) else "bit_flip"


def simulate_outcomes(theta: LambdaParams, noise: NoiseModel, meas_idx, prep_idx, t, rng: RngStream) -> np.ndarray:
    """Vectorized single shots: int8 bits, or complex signals for Gaussian readout"""
    signal = isinstance(noise.readout, GaussianReadout)
    p = noisy_probability(theta.to_array(), noise, meas_idx, prep_idx, t, apply_readout=not signal)
    y = (rng.random(p.size) >= p).astype(np.int8)
    if not signal:
        return y
    readout = noise.readout
    z = rng.generator.standard_normal((p.size, 2))
    points = np.empty((p.size, 2))
    for label, mean, cov in ((0, readout.mean0, readout.cov0), (1, readout.mean1, readout.cov1)):
        chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
        rows = y == label
        points[rows] = np.asarray(mean) + z[rows] @ chol.T
    return points[:, 0] + 1j * points[:, 1]


def simulate_shot(theta_star: LambdaParams, n: NoiseModel, q: Query, rng: RngStream) -> ShotRecord:
    outcome = simulate_outcomes(theta_star, n, [q.meas.index], [int(q.prep)], [q.t], rng)[0]
    if isinstance(n.readout, GaussianReadout):
        return ShotRecord(query=q, signal=(float(outcome.real), float(outcome.imag)))
    return ShotRecord(query=q, y=int(outcome))


def generate_dataset(
    theta_star: LambdaParams,
    n: NoiseModel,
    space: QuerySpace,
    shots_per_query: int,
    rng: RngStream,
) -> Dataset:
    """shots_per_query simulated shots for every query of the space"""
    if shots_per_query < 1:
        raise DomainError(f"shots_per_query must be at least 1, got {shots_per_query}")
    index = np.repeat(np.arange(space.size), shots_per_query)
    outcomes = simulate_outcomes(
        theta_star, n, space.meas_idx[index], space.prep_idx[index], space.t[index], rng
    )
    d = Dataset(space, readout_kind(n))
    for i in range(space.size):
        d.add_shots(i, outcomes[i * shots_per_query:(i + 1) * shots_per_query])
    return d


def replay_draw(d: Dataset, q: Query, rng: RngStream) -> ShotRecord:
    """Remove and return one unused recorded shot of q"""
    outcome = d.draw(d.space.index_of(q), rng)
    if d.is_signal:
        return ShotRecord(query=q, signal=(float(np.real(outcome)), float(np.imag(outcome))))
    return ShotRecord(query=q, y=int(outcome))


class SimulatorOracle:
    """Unlimited shots drawn from the noisy model at θ*"""

    def __init__(self, theta_star: LambdaParams, noise: NoiseModel, rng: RngStream):
        self.theta_star = theta_star
        self.noise = noise
        self.rng = rng
        self.readout_kind = readout_kind(noise)

    def remaining(self, space: QuerySpace) -> np.ndarray:
        return np.full(space.size, np.inf)

    def query(self, space: QuerySpace, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices, dtype=int)
        return simulate_outcomes(
            self.theta_star, self.noise,
            space.meas_idx[indices], space.prep_idx[indices], space.t[indices], self.rng,
        )


class ReplayOracle:
    """Answers from a private copy of a recorded dataset; never mutates the caller's copy"""

    def __init__(self, dataset: Dataset, rng: RngStream):
        self.dataset = dataset.copy()
        self.rng = rng
        self.readout_kind = dataset.readout_kind

    def _map(self, space: QuerySpace, indices: np.ndarray) -> np.ndarray:
        return self.dataset.space.indices_of(space.meas_idx[indices], space.prep_idx[indices], space.t[indices])

    def remaining(self, space: QuerySpace) -> np.ndarray:
        mapped = self._map(space, np.arange(space.size))
        counts = np.zeros(space.size)
        known = mapped >= 0
        counts[known] = self.dataset.ledger[mapped[known]]
        return counts

    def query(self, space: QuerySpace, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices, dtype=int)
        mapped = self._map(space, indices)
        if np.any(mapped < 0):
            raise ExhaustedQueryError("query outside the recorded dataset")
        dtype = complex if self.dataset.is_signal else np.int8
        return np.array([self.dataset.draw(int(i), self.rng) for i in mapped], dtype=dtype)


class HeldOutShots(NamedTuple):
    """Held-out shots for the testing error"""
    space: QuerySpace
    indices: np.ndarray
    outcomes: np.ndarray


def draw_test_set(theta_star: LambdaParams, noise: NoiseModel, p_test: QueryDistribution,
                  size: int, rng: RngStream) -> HeldOutShots:
    """size queries drawn from p_test, each answered by one simulated shot"""
    if size < 1:
        raise DomainError(f"test set size must be at least 1, got {size}")
    space = p_test.space
    indices = rng.choice(space.size, size=size, p=p_test.weights)
    outcomes = simulate_outcomes(
        theta_star, noise, space.meas_idx[indices], space.prep_idx[indices], space.t[indices], rng
    )
    return HeldOutShots(space, indices, outcomes)
