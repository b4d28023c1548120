"""Per-round measurements: loss, consensus error, gradient norm.

Loss and gradient norm are evaluated at the mean iterate xbar (the
quantity the convergence analysis controls), on the full dataset with
exact gradients. The average of per-client local losses at their own
parameters is reported alongside as loss_local_avg.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Shard
from .objective import global_gradient, global_loss, local_loss


@dataclass
class RoundMetrics:
    round: int
    eta: float
    loss: float
    consensus_error: float
    grad_norm_sq: float
    loss_local_avg: float | None = None


def mean_iterate(X: np.ndarray) -> np.ndarray:
    """Column average of the stacked parameter matrix."""
    return X.mean(axis=1)


def consensus_error(X: np.ndarray) -> float:
    """(1/n) sum_i ||x_i - xbar||^2, the mean squared client deviation."""
    dev = X - mean_iterate(X)[:, None]
    return float((dev * dev).sum() / X.shape[1])


def measure(
    X: np.ndarray,
    dataset: Dataset,
    lam: float,
    t: int,
    eta: float,
    shards: list[Shard] | None = None,
) -> RoundMetrics:
    """Evaluate one round's metrics at the mean iterate; deterministic."""
    xbar = mean_iterate(X)
    grad = global_gradient(xbar, dataset, lam)
    local_avg = None
    if shards is not None:
        local_avg = float(
            np.mean([local_loss(X[:, i], shard, dataset, lam) for i, shard in enumerate(shards)])
        )
    return RoundMetrics(
        round=t,
        eta=eta,
        loss=global_loss(xbar, dataset, lam),
        consensus_error=consensus_error(X),
        grad_norm_sq=float(grad @ grad),
        loss_local_avg=local_avg,
    )
