"""Splittable, label-addressed pseudo-randomness.

Every stochastic choice in the library (weight init, edge sampling,
pooling, augmentation, shuffling) draws from a :class:`PrngStream`
identified by a (seed, label-path) pair.  Child streams are derived by
hashing the path, so forking is insensitive to how many values the
parent has already drawn and experiments stay reproducible when work is
reordered.
"""

from __future__ import annotations

import copy
import hashlib

import numpy as np

__all__ = ["PrngStream"]


def _key_from(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}|{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


class PrngStream:
    """Counter-based random stream addressed by (seed, stream label).

    Two streams constructed with the same (seed, label) produce identical
    sequences.  ``fork`` derives a child whose sequence depends only on
    the parent's identity and the child label, never on draw order.
    A stream is single-consumer; concurrent users must each hold their
    own fork.
    """

    def __init__(self, seed: int, label: str = "root"):
        if not label:
            raise ValueError("stream label must be non-empty")
        self.seed = int(seed)
        self.label = label
        self.counter = 0
        self._gen = np.random.Generator(np.random.Philox(key=_key_from(self.seed, label)))

    def fork(self, label: str) -> "PrngStream":
        if not label:
            raise ValueError("fork label must be non-empty")
        return PrngStream(self.seed, f"{self.label}/{label}")

    def clone(self) -> "PrngStream":
        other = PrngStream(self.seed, self.label)
        other.counter = self.counter
        other._gen = copy.deepcopy(self._gen)
        return other

    def uniform(self, shape=(), dtype=np.float64) -> np.ndarray:
        """I.i.d. samples in [0, 1); advances the counter."""
        out = self._gen.random(size=shape)
        self.counter += int(np.prod(shape)) if shape != () else 1
        return np.asarray(out, dtype=dtype)

    def normal(self, shape=(), scale=1.0, dtype=np.float64) -> np.ndarray:
        out = self._gen.normal(loc=0.0, scale=scale, size=shape)
        self.counter += int(np.prod(shape)) if shape != () else 1
        return np.asarray(out, dtype=dtype)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        out = self._gen.integers(low, high, size=shape)
        self.counter += int(np.prod(shape)) if shape != () else 1
        return out

    def shuffle(self, n: int) -> np.ndarray:
        """A permutation of range(n)."""
        self.counter += n
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"PrngStream(seed={self.seed}, label={self.label!r}, counter={self.counter})"
