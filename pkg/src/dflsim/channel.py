"""Seeded zero-mean Gaussian channel noise with keyed random streams.

Every (repeat, round, client, purpose) tuple maps to its own independent
pseudorandom stream derived from the master seed, so a simulation is
bit-reproducible no matter how clients are scheduled, and no two logical
tasks ever share a stream. The variance knob is the per-coordinate
variance of the noise vector, so E||delta||^2 = d * variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PURPOSE_DATA_BATCH = 0
PURPOSE_CHANNEL_NOISE = 1
PURPOSE_INIT = 2

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseSpec:
    """Per-coordinate channel noise variance plus the master seed."""

    variance: float
    master_seed: int

    def __post_init__(self) -> None:
        if self.variance < 0:
            raise ValueError(f"variance must be >= 0, got {self.variance}")


@dataclass(frozen=True)
class StreamKey:
    master_seed: int
    repeat: int
    round: int
    client: int
    purpose: int


def derive_stream(key: StreamKey) -> np.random.Generator:
    """Deterministic, collision-resistant mapping from key to a fresh stream.

    Distinct keys give statistically independent streams; identical keys
    give byte-identical output.
    """
    seq = np.random.SeedSequence(
        entropy=key.master_seed & _SEED_MASK,
        spawn_key=(key.repeat, key.round, key.client, key.purpose),
    )
    return np.random.default_rng(seq)


def sample_noise(stream: np.random.Generator, d: int, variance: float) -> np.ndarray:
    """One noise vector with i.i.d. N(0, variance) entries.

    Variance zero returns the exact zero vector without consuming the
    stream.
    """
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    if variance == 0.0:
        return np.zeros(d)
    return stream.normal(0.0, math.sqrt(variance), size=d)
