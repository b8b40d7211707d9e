"""
Seeded random streams
A stream is identified by (seed, path); children extend the path, so
data generation, batch sampling and test sets never share draws.
"""
from typing import Tuple

import numpy as np

STREAM_IDS = {
    "dataset": 0,
    "learner": 1,
    "test": 2,
    "oracle": 3,
    "bootstrap": 4,
    "minibatch": 5,
}


class RngStream:
    """numpy Generator bound to a reproducible (seed, stream path)"""

    def __init__(self, seed: int, stream: Tuple[int, ...] = ()):
        if seed < 0 or seed >= 2 ** 64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        self.generator = np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        )

    @classmethod
    def for_run(cls, master_seed: int, run_index: int) -> "RngStream":
        return cls(master_seed, (run_index,))

    def child(self, name) -> "RngStream":
        """Independent sub-stream; name is a STREAM_IDS key or an integer"""
        key = STREAM_IDS[name] if isinstance(name, str) else int(name)
        return RngStream(self.seed, self.stream + (key,))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    # thin pass-throughs used across the package
    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def choice(self, a, size=None, replace=True, p=None):
        return self.generator.choice(a, size=size, replace=replace, p=p)

    def binomial(self, n, p, size=None):
        return self.generator.binomial(n, p, size=size)

    def permutation(self, x):
        return self.generator.permutation(x)

    def multivariate_normal(self, mean, cov, size=None):
        return self.generator.multivariate_normal(mean, cov, size=size)
