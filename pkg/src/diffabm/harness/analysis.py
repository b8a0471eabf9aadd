"""Summary statistics computed from runner outputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def final_loss(losses, window: int = 10) -> float:
    """Mean loss term over the last ``window`` epochs."""
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0:
        raise ValueError("empty loss log")
    return float(losses[-window:].mean())


def plateau_epoch(losses, window: int = 50, tol: float = 0.01):
    """First epoch ``e`` at which the mean loss over the ``window`` epochs ending
    at ``e`` differs by less than ``tol`` (relative) from the mean over the
    ``window`` epochs before those, or ``None``.
    """
    losses = np.asarray(losses, dtype=float)
    if losses.size < 2 * window:
        return None
    means = np.convolve(losses, np.ones(window) / window, mode="valid")  # means[i] ends at i+window-1
    for i in range(window, means.size):
        ref = abs(means[i - window])
        if ref > 0 and abs(means[i] - means[i - window]) / ref < tol:
            return i + window - 1
    return None


def envelope(trajectories, lo: float = 5.0, hi: float = 95.0):
    trajectories = np.asarray(trajectories, dtype=float)
    return np.percentile(trajectories, lo, axis=0), np.percentile(trajectories, hi, axis=0)


def coverage(truth, trajectories, lo: float = 5.0, hi: float = 95.0) -> float:
    """Fraction of ``truth`` points inside the percentile envelope."""
    low, high = envelope(trajectories, lo, hi)
    truth = np.asarray(truth, dtype=float)
    return float(np.mean((truth >= low) & (truth <= high)))


def envelope_width(trajectories, index: int = -1, lo: float = 5.0, hi: float = 95.0) -> float:
    low, high = envelope(trajectories, lo, hi)
    return float(high[index] - low[index])


def affine_fit(x, y):
    """Least-squares ``y = a + b x``; returns ``(a, b, r2)``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    b, a = np.polyfit(x, y, 1)
    resid = y - (a + b * x)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def median_std(estimates) -> float:
    """Median over components of the std across repetitions; ``estimates`` is (reps, F)."""
    return float(np.median(np.asarray(estimates).std(axis=0, ddof=1)))


@dataclass
class OrderingResult:
    labels: tuple
    medians: tuple
    p_values: tuple        # per adjacent pair: bootstrap P(left <= right)
    inversions: int        # adjacent pairs significantly out of order
    alpha: float

    @property
    def passed(self) -> bool:
        return self.inversions <= 1


def variance_ordering(samples: dict, order, alpha: float = 0.05, n_boot: int = 2000,
                      seed: int = 0) -> OrderingResult:
    """Test ``median_std(order[0]) <= median_std(order[1]) <= ...``.

    ``samples[label]`` is a (reps, F) array of repeated gradient estimates drawn
    with common random numbers, so repetitions are resampled jointly. An
    adjacent pair counts as inverted when fewer than ``alpha`` of the bootstrap
    replicates keep it in order.
    """
    order = tuple(order)
    arrays = [np.asarray(samples[k], dtype=float) for k in order]
    reps = arrays[0].shape[0]
    if any(a.shape[0] != reps for a in arrays):
        raise ValueError("all estimators need the same number of repetitions")
    rng = np.random.default_rng(seed)
    boot = np.empty((n_boot, len(order)))
    for b in range(n_boot):
        idx = rng.integers(0, reps, reps)
        boot[b] = [median_std(a[idx]) for a in arrays]
    p = tuple(float(np.mean(boot[:, i] <= boot[:, i + 1])) for i in range(len(order) - 1))
    medians = tuple(median_std(a) for a in arrays)
    inversions = sum(1 for i, pv in enumerate(p) if medians[i] > medians[i + 1] and pv < alpha)
    return OrderingResult(order, medians, p, inversions, alpha)


def within_stderr(mean_a, se_a, mean_b, se_b, k: float = 3.0) -> np.ndarray:
    """Componentwise ``|a - b| <= k * sqrt(se_a^2 + se_b^2)``."""
    combined = np.sqrt(np.asarray(se_a) ** 2 + np.asarray(se_b) ** 2)
    return np.abs(np.asarray(mean_a) - np.asarray(mean_b)) <= k * combined
