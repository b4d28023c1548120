"""Executable checks of the analysis behind the algorithms.

The estimators here turn the analysis constants into measurable
quantities: smoothness L, gradient-noise variance sigma^2, client
heterogeneity zeta^2. The sigma^2 and zeta^2 values are maxima over
sampled points, so they are estimated lower envelopes of the assumed
uniform bounds, and the worst-case bound evaluation built on them is a
sanity check rather than a certificate.

Also here: a Monte-Carlo check that the tracking bias stays zero-mean
under channel noise, and the contraction check for gossip matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, Shard
from .objective import ObjectiveConfig, full_local_gradient, stochastic_gradient

_DENSE_EIG_MAX_DIM = 512
_POWER_TOL = 1e-6
_POWER_MAX_ITERS = 10_000


class PreconditionViolated(ValueError):
    """A worst-case bound was requested outside its validity region."""

    def __init__(self, inequality: str, detail: str):
        self.inequality = inequality
        super().__init__(f"precondition violated: {inequality} ({detail})")


@dataclass
class ConstantsEstimate:
    """Inputs to the worst-case bound, all measured or estimated.

    B_bar_sq is the running average of ||B_t||_F^2 / n over the measured
    run; D_sq_total is the per-client total noise energy E||delta||^2,
    i.e. dimension times the per-coordinate variance.
    """

    L: float
    sigma_sq: float
    zeta_sq: float
    D_sq_total: float
    B_bar_sq: float
    f0_gap: float


@dataclass
class BiasMeanReport:
    passed: bool
    max_abs_mean: float
    max_se_ratio: float
    empirical_variance: float
    predicted_variance: float
    trials: int
    rounds: int


@dataclass
class ContractionReport:
    passed: bool
    max_ratio: float
    allowed: float
    trials: int


def _gram_lambda_max(feats: np.ndarray, m: int) -> float:
    """Largest eigenvalue of 2 F^T F / m, dense for small d, power iteration above."""
    d = feats.shape[1]
    if d <= _DENSE_EIG_MAX_DIM:
        return float(np.linalg.eigvalsh(2.0 * (feats.T @ feats) / m)[-1])
    rng = np.random.default_rng(0)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(_POWER_MAX_ITERS):
        u = 2.0 * (feats.T @ (feats @ v)) / m
        new_estimate = float(v @ u)
        norm_u = np.linalg.norm(u)
        if norm_u == 0.0:
            return 0.0
        v = u / norm_u
        if abs(new_estimate - estimate) <= _POWER_TOL * max(abs(new_estimate), 1e-300):
            return new_estimate
        estimate = new_estimate
    return estimate


def estimate_smoothness(dataset: Dataset, shards: list[Shard], lam: float) -> float:
    """Smoothness constant L = max over shards of lambda_max(2 F^T F / m) + 2 lam."""
    worst = 0.0
    for shard in shards:
        feats = dataset.features[shard.start : shard.stop]
        worst = max(worst, _gram_lambda_max(feats, shard.size))
    return worst + 2.0 * lam


def estimate_sigma_sq(
    x_samples: list[np.ndarray],
    shards: list[Shard],
    dataset: Dataset,
    config: ObjectiveConfig,
    rng: np.random.Generator,
    draws: int = 500,
) -> float:
    """Worst observed minibatch-gradient variance over sampled points and clients."""
    worst = 0.0
    for x in x_samples:
        for shard in shards:
            mean_grad = full_local_gradient(x, shard, dataset, config.lam)
            if config.batch_size >= shard.size:
                continue  # full batch has zero sampling variance
            acc = 0.0
            for _ in range(draws):
                g = stochastic_gradient(x, shard, dataset, config, rng)
                diff = g - mean_grad
                acc += float(diff @ diff)
            worst = max(worst, acc / draws)
    return worst


def estimate_zeta_sq(
    x_samples: list[np.ndarray],
    shards: list[Shard],
    dataset: Dataset,
    lam: float,
) -> float:
    """Worst observed client heterogeneity (1/n) sum_i ||grad_i - grad||^2."""
    worst = 0.0
    for x in x_samples:
        grads = np.column_stack([full_local_gradient(x, s, dataset, lam) for s in shards])
        mean = grads.mean(axis=1, keepdims=True)
        dev = grads - mean
        worst = max(worst, float((dev * dev).sum() / len(shards)))
    return worst


def check_bias_zero_mean(
    mu: float,
    per_coord_variance: float,
    n: int,
    d: int,
    T: int,
    trials: int,
    seed: int,
) -> BiasMeanReport:
    """Monte-Carlo test that the averaged tracking bias has zero mean.

    Simulates the column-mean recursion b_t = mu * b_{t-1} + mean of the
    round's n client noise draws, starting from zero, over independent
    noise sequences. Each coordinate's sample mean after T rounds must
    sit within 4 standard errors of zero. The variance is reported but
    not asserted.
    """
    if not 0.0 <= mu < 1.0:
        raise ValueError(f"mu must be in [0, 1), got {mu}")
    rng = np.random.default_rng(seed)
    b = np.zeros((trials, d))
    if per_coord_variance > 0:
        scale = math.sqrt(per_coord_variance)
        for _ in range(T):
            delta_bar = rng.normal(0.0, scale, size=(trials, n, d)).mean(axis=1)
            b = mu * b + delta_bar
    means = b.mean(axis=0)
    if per_coord_variance == 0:
        return BiasMeanReport(
            passed=bool(np.all(b == 0.0)),
            max_abs_mean=float(np.max(np.abs(means))),
            max_se_ratio=0.0,
            empirical_variance=0.0,
            predicted_variance=0.0,
            trials=trials,
            rounds=T,
        )
    ses = b.std(axis=0, ddof=1) / math.sqrt(trials)
    ratios = np.abs(means) / ses
    geometric = (1.0 - mu ** (2 * T)) / (1.0 - mu * mu)
    return BiasMeanReport(
        passed=bool(np.all(ratios <= 4.0)),
        max_abs_mean=float(np.max(np.abs(means))),
        max_se_ratio=float(ratios.max()),
        empirical_variance=float(b.var(axis=0, ddof=1).mean()),
        predicted_variance=per_coord_variance / n * geometric,
        trials=trials,
        rounds=T,
    )


def evaluate_theorem_bound(
    consts: ConstantsEstimate,
    rho: float,
    mu: float,
    eta: float,
    n: int,
    T: int,
    noise_schedule=None,
) -> float:
    """Worst-case upper bound on (1/T) sum_t ||grad f(xbar_t)||^2.

    noise_schedule gives the per-client noise energy E||delta||^2 per
    round: None uses consts.D_sq_total for every round, a scalar is held
    constant, and a length-T array is summed as given. Raises
    PreconditionViolated when the step size or scaling factor leaves the
    regime the bound is proved for.
    """
    L = consts.L
    if L <= 0:
        raise ValueError("smoothness constant must be positive")
    eta_cap = min(1.0 / (4.0 * L), rho / (7.0 * L))
    if eta > eta_cap:
        raise PreconditionViolated(
            "eta <= min(1/(4L), rho/(7L))", f"eta={eta:.4g} > {eta_cap:.4g}"
        )
    if 6.0 * mu * mu / (rho * (1.0 - mu)) > rho / 8.0:
        raise PreconditionViolated(
            "6 mu^2 / (rho (1-mu)) <= rho/8",
            f"lhs={6.0 * mu * mu / (rho * (1.0 - mu)):.4g} > {rho / 8.0:.4g}",
        )
    if mu / (1.0 - mu) > rho / 42.0:
        raise PreconditionViolated(
            "mu/(1-mu) <= rho/42", f"mu/(1-mu)={mu / (1.0 - mu):.4g} > {rho / 42.0:.4g}"
        )

    if noise_schedule is None:
        noise_schedule = consts.D_sq_total
    schedule = np.broadcast_to(np.asarray(noise_schedule, dtype=float), (T,))
    noise_sum = n * float(schedule.sum())  # sum over rounds and clients of D^2_{t,i}

    inv_tail = 1.0 / (2.0 * n * L * eta)
    term_init = 2.0 * consts.f0_gap / (eta * T)
    term_bias = L * mu * mu * eta * consts.B_bar_sq
    term_sigma = 2.0 * L * L * eta * eta * consts.sigma_sq * (
        16.0 / (rho * n) + (1.0 - mu) / 2.0 + inv_tail
    )
    term_zeta = 2.0 * L * L * eta * eta * consts.zeta_sq * (48.0 / (rho * rho) + 0.5)
    term_noise = (2.0 * L * L * eta * eta / T) * noise_sum * (
        16.0 / (n * rho * rho) + 0.5 + inv_tail
    )
    return term_init + term_bias + term_sigma + term_zeta + term_noise


def check_contraction(
    mixing,
    rho: float,
    trials: int,
    seed: int,
    d: int = 8,
) -> ContractionReport:
    """Check ||(X - Xbar) W||_F^2 <= (1 - rho + 1e-9) ||X - Xbar||_F^2 on random X."""
    w = np.asarray(getattr(mixing, "weights", mixing), dtype=float)
    n = w.shape[0]
    rng = np.random.default_rng(seed)
    allowed = 1.0 - rho + 1e-9
    max_ratio = 0.0
    for _ in range(trials):
        X = rng.standard_normal((d, n))
        dev = X - X.mean(axis=1, keepdims=True)
        denom = float((dev * dev).sum())
        if denom == 0.0:
            continue
        mixed = dev @ w
        max_ratio = max(max_ratio, float((mixed * mixed).sum()) / denom)
    return ContractionReport(
        passed=max_ratio <= allowed,
        max_ratio=max_ratio,
        allowed=allowed,
        trials=trials,
    )
