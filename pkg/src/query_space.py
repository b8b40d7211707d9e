"""
Query space containers
QuerySpace is the product M × U × T over an equispaced time grid; queries are
indexed meas-major, then preparation, then time.
"""
import math
from enum import Enum
from typing import Iterable, List, Optional, Sequence

import numpy as np

from src.errors import DomainError
from src.models import MEAS_ORDER, PREP_ORDER, Meas, Prep, Query

DEFAULT_T_MIN = 1e-7
DEFAULT_T_MAX = 6e-7
DEFAULT_N_TIMES = 81
DEFAULT_INCREMENT = 5e-7


class GrowthPolicy(str, Enum):
    FIXED = "fixed"
    LINEAR_T = "linear_t"
    EXPONENTIAL_T = "exponential_t"


class QuerySpace:
    """Product query space with an ordered evolution-time grid"""

    def __init__(
        self,
        times: Sequence[float],
        growth: GrowthPolicy = GrowthPolicy.FIXED,
        increment: float = DEFAULT_INCREMENT,
        spacing: Optional[float] = None,
    ):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise DomainError("time grid must be a non-empty 1-D sequence")
        if np.any(times <= 0) or np.any(np.diff(times) <= 0):
            raise DomainError("time grid must be positive and strictly increasing")
        self.times = times
        self.growth = GrowthPolicy(growth)
        self.increment = float(increment)
        if spacing is None:
            spacing = float(times[1] - times[0]) if times.size > 1 else float(times[0])
        self.spacing = float(spacing)
        n_t = times.size
        grid = np.indices((len(MEAS_ORDER), len(PREP_ORDER), n_t)).reshape(3, -1)
        self.meas_idx = grid[0]
        self.prep_idx = grid[1]
        self.t = times[grid[2]]

    @classmethod
    def uniform(
        cls,
        t_min: float = DEFAULT_T_MIN,
        t_max: float = DEFAULT_T_MAX,
        n_times: int = DEFAULT_N_TIMES,
        growth: GrowthPolicy = GrowthPolicy.FIXED,
        increment: float = DEFAULT_INCREMENT,
    ) -> "QuerySpace":
        if n_times < 2 or not 0 < t_min < t_max:
            raise DomainError("uniform grid needs n_times ≥ 2 and 0 < t_min < t_max")
        spacing = (t_max - t_min) / (n_times - 1)
        times = t_min + np.arange(n_times) * spacing
        return cls(times, growth=growth, increment=increment, spacing=spacing)

    @property
    def n_times(self) -> int:
        return int(self.times.size)

    @property
    def size(self) -> int:
        return int(self.t.size)

    @property
    def t_min(self) -> float:
        return float(self.times[0])

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    @property
    def nyquist_omega(self) -> float:
        """Upper bound on ω_j resolvable on this grid"""
        return math.pi / self.spacing

    @property
    def snapshot_id(self) -> str:
        return f"{self.n_times}@{self.t_max:.6g}"

    def extended(self, n_new: int) -> "QuerySpace":
        """Same grid with n_new further points at the current spacing"""
        extra = self.times[0] + np.arange(self.n_times, self.n_times + n_new) * self.spacing
        return QuerySpace(
            np.concatenate([self.times, extra]),
            growth=self.growth, increment=self.increment, spacing=self.spacing,
        )

    def query(self, index: int) -> Query:
        return Query(
            meas=MEAS_ORDER[self.meas_idx[index]],
            prep=PREP_ORDER[self.prep_idx[index]],
            t=float(self.t[index]),
        )

    def queries(self, indices: Optional[Iterable[int]] = None) -> List[Query]:
        indices = range(self.size) if indices is None else indices
        return [self.query(int(i)) for i in indices]

    def time_index(self, t) -> np.ndarray:
        """Grid position of each time, −1 where t is not on the grid"""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        pos = np.clip(np.searchsorted(self.times, t), 0, self.n_times - 1)
        lower = np.clip(pos - 1, 0, self.n_times - 1)
        best = np.where(np.abs(self.times[lower] - t) < np.abs(self.times[pos] - t), lower, pos)
        tol = 1e-6 * self.spacing
        return np.where(np.abs(self.times[best] - t) <= tol, best, -1)

    def indices_of(self, meas_idx, prep_idx, t) -> np.ndarray:
        k = self.time_index(t)
        flat = (np.asarray(meas_idx) * len(PREP_ORDER) + np.asarray(prep_idx)) * self.n_times + k
        return np.where(k >= 0, flat, -1)

    def index_of(self, q: Query) -> int:
        index = int(self.indices_of([Meas(q.meas).index], [int(Prep(q.prep))], [q.t])[0])
        if index < 0:
            raise DomainError(f"query {q.key()} is not in the query space")
        return index

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return (f"QuerySpace(n_times={self.n_times}, t=[{self.t_min:.3g}, {self.t_max:.3g}], "
                f"growth={self.growth.value})")


class QuerySubset:
    """A filtered selection of queries from a QuerySpace"""

    def __init__(self, space: QuerySpace, indices: Sequence[int]):
        indices = np.unique(np.asarray(indices, dtype=int))
        if indices.size == 0:
            raise DomainError("query subset cannot be empty")
        if indices[0] < 0 or indices[-1] >= space.size:
            raise DomainError("subset indices fall outside the query space")
        self.space = space
        self.indices = indices

    @classmethod
    def full(cls, space: QuerySpace) -> "QuerySubset":
        return cls(space, np.arange(space.size))

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def mask(self) -> np.ndarray:
        mask = np.zeros(self.space.size, dtype=bool)
        mask[self.indices] = True
        return mask

    def queries(self) -> List[Query]:
        return self.space.queries(self.indices)


class QueryDistribution:
    """Probability weights over every query of a QuerySpace"""

    def __init__(self, space: QuerySpace, weights: Sequence[float]):
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (space.size,):
            raise DomainError(f"expected {space.size} weights, got shape {weights.shape}")
        if np.any(weights < -1e-12) or not np.all(np.isfinite(weights)):
            raise DomainError("query weights must be finite and nonnegative")
        total = float(weights.sum())
        if abs(total - 1.0) > 1e-10:
            raise DomainError(f"query weights sum to {total}, not 1")
        self.space = space
        self.weights = np.clip(weights, 0.0, None) / np.clip(weights, 0.0, None).sum()

    @classmethod
    def uniform(cls, space: QuerySpace, subset: Optional[QuerySubset] = None) -> "QueryDistribution":
        weights = np.zeros(space.size)
        indices = np.arange(space.size) if subset is None else subset.indices
        weights[indices] = 1.0 / indices.size
        return cls(space, weights)

    @classmethod
    def point_mass(cls, space: QuerySpace, index: int) -> "QueryDistribution":
        weights = np.zeros(space.size)
        weights[index] = 1.0
        return cls(space, weights)

    @classmethod
    def from_unnormalized(cls, space: QuerySpace, weights: Sequence[float]) -> "QueryDistribution":
        weights = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        total = weights.sum()
        if not total > 0:
            raise DomainError("weights have no positive mass")
        return cls(space, weights / total)

    def support(self, threshold: float = 0.0) -> np.ndarray:
        return np.flatnonzero(self.weights > threshold)

    def mass_fraction(self, mass: float = 0.99) -> float:
        """Fraction of queries needed to carry the given share of the mass"""
        ordered = np.sort(self.weights)[::-1]
        needed = int(np.searchsorted(np.cumsum(ordered), mass - 1e-12)) + 1
        return needed / self.space.size
