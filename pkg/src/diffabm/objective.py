"""Losses and the generalised variational objective."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .ad import ops
from .ad.base import Differentiable

log = logging.getLogger(__name__)

LOG10_DELTA = 1.0


@dataclass(frozen=True)
class GaussianKernel:
    bandwidth: float = 1.0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("kernel bandwidth must be positive")

    def __call__(self, u, v):
        d = u - v
        return ops.exp(ops.square(d) * (-0.5 / self.bandwidth**2))


def _as_series(x):
    return x if isinstance(x, Differentiable) else np.asarray(x, dtype=float)


def _pairwise(kernel: GaussianKernel, a, b):
    a, b = _as_series(a), _as_series(b)
    return kernel(a.reshape(len(a), 1), b.reshape(1, len(b)))


def mmd2(x, y, kernel: GaussianKernel) -> object:
    """Squared MMD between two series.

    Within-sample sums skip the diagonal and are normalised by ``T(T-1)``; the
    cross term is the full ``T_x T_y`` average. Either argument may be traced.
    """
    tx, ty = len(ops.value(x)), len(ops.value(y))
    if tx < 2 or ty < 2:
        raise ValueError("mmd2 needs series of length >= 2")
    kxx = _pairwise(kernel, x, x)
    kyy = _pairwise(kernel, y, y)
    kxy = _pairwise(kernel, x, y)
    off_x = 1.0 - np.eye(tx)
    off_y = 1.0 - np.eye(ty)
    return ((kxx * off_x).sum() * (1.0 / (tx * (tx - 1)))
            + (kyy * off_y).sum() * (1.0 / (ty * (ty - 1)))
            - kxy.sum() * (2.0 / (tx * ty)))


def median_heuristic(y) -> float:
    """Median of pairwise absolute differences; 1.0 if the series is constant."""
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise ValueError("median heuristic needs at least two values")
    i, j = np.triu_indices(y.size, k=1)
    diffs = np.abs(y[i] - y[j])
    bw = float(np.median(diffs))
    if bw == 0.0:
        log.warning("median heuristic found no spread in the data; using bandwidth 1.0")
        return 1.0
    return bw


def log10_sse(x, y, delta: float = LOG10_DELTA):
    """Sum of squared differences of ``log10(. + delta)`` series."""
    xv, yv = ops.value(x), np.asarray(y, dtype=float)
    if xv.shape != yv.shape:
        raise ValueError(f"series lengths differ: {xv.shape} vs {yv.shape}")
    if np.any(xv < 0) or np.any(yv < 0):
        raise ValueError("log10_sse needs non-negative series")
    diff = (ops.log(x + delta) - np.log(yv + delta)) * (1.0 / np.log(10.0))
    return ops.square(diff).sum()


@dataclass(frozen=True)
class GviConfig:
    """Weighting and sample count of the variational objective.

    ``weight_on="kl"`` multiplies the KL term by ``w`` (the objective is
    ``E[loss] + w KL``); ``weight_on="loss"`` multiplies the expected loss
    instead (``w E[loss] + KL``). Both share the same minimiser when ``w`` is
    inverted.
    """

    w: float = 1e-3
    n_samples: int = 5
    weight_on: str = "kl"

    def __post_init__(self):
        if not self.w >= 0:
            raise ValueError("w must be non-negative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.weight_on not in ("kl", "loss"):
            raise ValueError("weight_on must be 'kl' or 'loss'")

    @property
    def loss_weight(self) -> float:
        return self.w if self.weight_on == "loss" else 1.0

    @property
    def kl_weight(self) -> float:
        return self.w if self.weight_on == "kl" else 1.0


def gaussian_kl(mean_q, log_scale_q, mean_p, scale_p):
    """Closed-form KL between diagonal Gaussians (``q`` may be traced)."""
    mean_p = np.asarray(mean_p, dtype=float)
    scale_p = np.asarray(scale_p, dtype=float)
    var_q = ops.exp(log_scale_q * 2.0)
    return (np.log(scale_p) - log_scale_q
            + (var_q + ops.square(mean_q - mean_p)) * (0.5 / scale_p**2) - 0.5).sum()


def check_support(log_prior, theta) -> None:
    if not np.isfinite(ops.value(log_prior)):
        raise ValueError(f"prior density is zero at theta={ops.value(theta)}")


def gvi_objective(q, prior, loss_fn, config: GviConfig, rng, tape=None, kl: str = "auto", horizon=None):
    """Monte Carlo estimate of the generalised variational objective.

    Returns ``(objective, loss_term, kl_term, params)`` where ``params`` are the
    traced leaves of ``q``'s parameters on ``tape`` (``None`` when no tape is
    given). ``kl`` selects ``"mc"`` (sample average of ``log q - log prior``),
    ``"closed"`` (Gaussian closed form) or ``"auto"`` (closed form when both
    are diagonal Gaussians).
    """
    from .infer.families import sample_reparam

    params = q.bind(tape) if tape is not None else None
    n = config.n_samples
    loss_total, kl_total = 0.0, 0.0
    use_closed = kl == "closed" or (kl == "auto" and q.closed_form_kl(prior) is not None)
    for i in range(n):
        s = sample_reparam(q, rng.spawn("base", i), params=params)
        loss_total = loss_total + loss_fn(s.theta, rng.spawn("sim", i), horizon)
        if not use_closed:
            lp = prior.log_prob(s.theta)
            check_support(lp, s.theta)
            kl_total = kl_total + (s.log_q - lp)
    loss_term = loss_total * (1.0 / n)
    if use_closed:
        kl_term = q.closed_form_kl(prior, params)
    else:
        kl_term = kl_total * (1.0 / n)
    objective = loss_term * config.loss_weight + kl_term * config.kl_weight
    return objective, loss_term, kl_term, params
