"""Seed management and the counter-based per-point random stream.

Two kinds of randomness are used:

- *Structured draws* (polynomial coefficients, cut-and-project lattices,
  periodic orbit elements, random affine words) come from a
  :class:`numpy.random.Generator` obtained by :func:`stream_rng`. Streams
  are separated by a ``SeedSequence`` spawn key ``(stream_id, *keys)``.
- *Per-point thinning uniforms* come from :class:`CounterRNG`, a keyed
  splitmix64 hash of ``(seed, stream_id, t_1, ..., t_d)``. The uniform for
  a lattice point does not depend on the box it was sampled in, so samples
  are box-extension consistent and tiling is invisible to the output.

Stream ids are fixed module constants; see ``STREAM_*`` below.
"""
from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from src.services.torus import MASK, PROB_BITS, PROB_SCALE

logger = logging.getLogger(__name__)

STREAM_STRUCTURE = 0
STREAM_THINNING = 1
STREAM_AUXILIARY = 2
STREAM_AFFINE = 3
STREAM_TRIALS = 4
STREAM_AP = 5
STREAM_PANEL = 6

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix_int(z: int) -> int:
    z = (z + _GOLDEN) & MASK
    z = ((z ^ (z >> 30)) * _MIX1) & MASK
    z = ((z ^ (z >> 27)) * _MIX2) & MASK
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministically derive a 64-bit child seed from ``seed`` and integer keys."""
    h = _mix_int(int(seed) & MASK)
    for key in keys:
        h = _mix_int(h ^ (int(key) & MASK))
    return h


def stream_rng(seed: int, stream_id: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream_id, *keys)``."""
    sequence = np.random.SeedSequence(int(seed) & MASK, spawn_key=(stream_id, *keys))
    return np.random.Generator(np.random.PCG64(sequence))


def uniform_fracs(rng: np.random.Generator, size: int | Sequence[int]) -> np.ndarray:
    """Uniform 64-bit torus fractions."""
    return rng.integers(0, 1 << 64, size=size, dtype=np.uint64)


class CounterRNG:
    """Per-point uniforms keyed by ``(seed, stream_id, coordinates)``."""

    def __init__(self, seed: int, stream_id: int = STREAM_THINNING) -> None:
        self.seed = int(seed) & MASK
        self.stream_id = stream_id
        self._key = derive_seed(self.seed, stream_id)

    def raw(self, points: np.ndarray) -> np.ndarray:
        """64-bit hashes for an ``(N, d)`` integer array of lattice points."""
        coords = np.ascontiguousarray(points, dtype=np.int64).view(np.uint64)
        h = np.full(coords.shape[0], self._key, dtype=np.uint64)
        for j in range(coords.shape[1]):
            h = _mix_array(h ^ coords[:, j])
        return h

    def uniforms53(self, points: np.ndarray) -> np.ndarray:
        """Integers uniform on ``[0, 2**53)``."""
        return self.raw(points) >> np.uint64(64 - PROB_BITS)

    def keep(self, points: np.ndarray, probs: np.ndarray | float) -> np.ndarray:
        """Independent retention of each point with its probability."""
        u = self.uniforms53(points)
        return u < probability_thresholds(probs, len(u))


def probability_thresholds(probs: np.ndarray | float, n: int) -> np.ndarray:
    """Map probabilities in [0, 1] to ``2**53``-scaled integer thresholds."""
    arr = np.broadcast_to(np.asarray(probs, dtype=np.float64), (n,))
    return np.rint(np.clip(arr, 0.0, 1.0) * PROB_SCALE).astype(np.uint64)
