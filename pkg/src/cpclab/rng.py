"""Deterministic random streams addressed by a root seed and a derivation path.

Every stochastic decision in the pipeline draws from a stream identified by
``(root_seed, path)`` where the path is a tuple of small integers such as
``(step, item, view)``.  Streams with the same address replay identically;
streams with different addresses are statistically independent.  Because the
address fully determines the stream, results never depend on thread scheduling
or on the order in which work items are processed.
"""

from __future__ import annotations

import numpy as np

_MAX_SEED = 2**64
_MAX_PATH_ENTRY = 2**32


class RngStream:
    """A seedable random stream derived from ``(root_seed, path)``.

    Thin wrapper over :class:`numpy.random.Generator` backed by the Philox
    counter-based bit generator, keyed through ``SeedSequence`` spawn keys so
    that child streams are independent of one another.
    """

    __slots__ = ("root_seed", "path", "_gen")

    def __init__(self, root_seed: int, path: tuple[int, ...] = ()):
        if not 0 <= root_seed < _MAX_SEED:
            raise ValueError(f"root_seed must be in [0, 2**64), got {root_seed}")
        path = tuple(int(p) for p in path)
        for p in path:
            if not 0 <= p < _MAX_PATH_ENTRY:
                raise ValueError(f"path entries must be in [0, 2**32), got {p}")
        self.root_seed = int(root_seed)
        self.path = path
        seq = np.random.SeedSequence(self.root_seed, spawn_key=path)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, *indices: int) -> "RngStream":
        """A fresh independent stream at ``path + indices``."""
        return RngStream(self.root_seed, self.path + tuple(indices))

    @property
    def np(self) -> np.random.Generator:
        """The underlying numpy generator (stateful: draws advance it)."""
        return self._gen

    def integer(self, low: int, high: int) -> int:
        """Uniform integer on the closed interval [low, high]."""
        return int(self._gen.integers(low, high, endpoint=True))

    def uniform(self, low: float, high: float) -> float:
        """Uniform float on [low, high]; collapses to the point when low == high."""
        if low == high:
            return float(low)
        return float(self._gen.uniform(low, high))

    def __repr__(self) -> str:
        return f"RngStream(root_seed={self.root_seed}, path={self.path})"
