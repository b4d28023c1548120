"""Ridge regression objectives and gradients.

The convention is mean (not half-mean) squared error plus lam * ||x||^2,
so gradients carry a factor 2:

    f_i(x) = (1/|S_i|) sum_{s in S_i} (<x, a_s> - y_s)^2 + lam * ||x||^2
    grad   = (2/|B|) sum_{s in B} (<x, a_s> - y_s) a_s + 2 * lam * x

Batches are drawn uniformly without replacement from the client's shard;
a batch covering the whole shard skips sampling entirely and does not
consume the random stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Shard

DEFAULT_LAMBDA = 1e-4
DEFAULT_BATCH_SIZE = 32

_MAX_SOLVE_DIM = 4096


@dataclass(frozen=True)
class ObjectiveConfig:
    lam: float = DEFAULT_LAMBDA
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def _shard_view(shard: Shard, dataset: Dataset):
    if shard.size <= 0:
        raise ValueError(f"empty shard for client {shard.client}")
    return dataset.features[shard.start : shard.stop], dataset.labels[shard.start : shard.stop]


def local_loss(x: np.ndarray, shard: Shard, dataset: Dataset, lam: float) -> float:
    """Mean squared residual over the shard plus the ridge penalty."""
    feats, labels = _shard_view(shard, dataset)
    residual = feats @ x - labels
    return float(residual @ residual / shard.size + lam * (x @ x))


def global_loss(x: np.ndarray, dataset: Dataset, lam: float) -> float:
    """Loss over the full dataset; what the reported loss curves plot."""
    return local_loss(x, Shard(client=-1, start=0, stop=dataset.m), dataset, lam)


def global_gradient(x: np.ndarray, dataset: Dataset, lam: float) -> np.ndarray:
    """Exact gradient of global_loss."""
    return full_local_gradient(x, Shard(client=-1, start=0, stop=dataset.m), dataset, lam)


def stochastic_gradient(
    x: np.ndarray,
    shard: Shard,
    dataset: Dataset,
    config: ObjectiveConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Minibatch gradient, unbiased for the full-shard gradient.

    The batch size is capped at the shard size; at the cap the whole
    shard is used in order and rng is left untouched.
    """
    feats, labels = _shard_view(shard, dataset)
    if config.batch_size < shard.size:
        picks = rng.choice(shard.size, size=config.batch_size, replace=False)
        feats = feats[picks]
        labels = labels[picks]
    residual = feats @ x - labels
    return (2.0 / residual.size) * (feats.T @ residual) + 2.0 * config.lam * x


def full_local_gradient(x: np.ndarray, shard: Shard, dataset: Dataset, lam: float) -> np.ndarray:
    """Gradient over the entire shard, no sampling."""
    feats, labels = _shard_view(shard, dataset)
    residual = feats @ x - labels
    return (2.0 / shard.size) * (feats.T @ residual) + 2.0 * lam * x


def ridge_optimum(dataset: Dataset, lam: float) -> tuple[np.ndarray, float]:
    """Exact minimizer of global_loss by direct solve, with its loss value.

    Solves (A^T A / m + lam I) x = A^T y / m. A singular system (possible
    only at lam = 0 with rank-deficient features) raises LinAlgError.
    """
    if dataset.d > _MAX_SOLVE_DIM:
        raise ValueError(f"dense solve guarded to d <= {_MAX_SOLVE_DIM}, got d={dataset.d}")
    a = dataset.features
    gram = a.T @ a / dataset.m + lam * np.eye(dataset.d)
    x = np.linalg.solve(gram, a.T @ dataset.labels / dataset.m)
    return x, global_loss(x, dataset, lam)
