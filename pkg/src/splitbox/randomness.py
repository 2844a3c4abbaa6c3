"""Randomness sources.

Every sampling step in setup, the entry role and the trace generators draws
from a :class:`RandomSource`. Tests and benchmarks use :class:`SeededRandom`
so runs are reproducible; deployments use :class:`SystemRandom`.
"""

from __future__ import annotations

import secrets
from typing import Protocol, runtime_checkable

import numpy as np


@runtime_checkable
class RandomSource(Protocol):
    """What the protocol needs from a random generator."""

    seed: int | None

    def bits(self, k: int) -> int:
        """Return ``k`` uniform bits as an unsigned integer."""
        ...

    def random(self) -> float:
        """Return a uniform float in ``[0, 1)``."""
        ...

    def integers(self, low: int, high: int) -> int:
        """Return a uniform integer in ``[low, high)``."""
        ...

    @property
    def generator(self) -> np.random.Generator:
        """A numpy generator for vectorised sampling."""
        ...

    def derive(self, label: int) -> RandomSource:
        """Return an independent stream labelled ``label``."""
        ...


class SeededRandom:
    """Deterministic source backed by :func:`numpy.random.default_rng`.

    Args:
        seed: Root seed, recorded in configs produced from this source.
        stream: Labels of the derived stream; empty for the root.
    """

    def __init__(self, seed: int, stream: tuple[int, ...] = ()):
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = seed
        self.stream = stream
        self._generator = np.random.default_rng([seed, *stream])

    def bits(self, k: int) -> int:
        if k <= 0:
            return 0
        nbytes = (k + 7) // 8
        raw = int.from_bytes(self._generator.bytes(nbytes), "big")
        return raw >> (8 * nbytes - k)

    def random(self) -> float:
        return float(self._generator.random())

    def integers(self, low: int, high: int) -> int:
        return int(self._generator.integers(low, high))

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def derive(self, label: int) -> SeededRandom:
        return SeededRandom(self.seed, (*self.stream, label))

    def __repr__(self) -> str:
        return f"SeededRandom(seed={self.seed}, stream={self.stream})"


class SystemRandom:
    """Operating-system entropy via :mod:`secrets`."""

    seed = None

    def __init__(self):
        self._system = secrets.SystemRandom()

    def bits(self, k: int) -> int:
        return secrets.randbits(k) if k > 0 else 0

    def random(self) -> float:
        return self._system.random()

    def integers(self, low: int, high: int) -> int:
        return self._system.randrange(low, high)

    @property
    def generator(self) -> np.random.Generator:
        return np.random.default_rng(secrets.randbits(128))

    def derive(self, label: int) -> SystemRandom:
        return SystemRandom()


def make_rng(seed: int | None = None) -> RandomSource:
    """Seeded source when ``seed`` is given, OS entropy otherwise."""
    return SystemRandom() if seed is None else SeededRandom(seed)
