"""Gumbel-Softmax relaxations of categorical and Bernoulli draws."""

from __future__ import annotations

import numpy as np

from . import ops
from .rng import RngStream


def gumbel_softmax(logits, temperature: float, noise, hard: bool = False):
    """Relaxed categorical sample for given Gumbel ``noise`` along the last axis."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    v = ops.value(logits)
    if not np.all(np.isfinite(v)):
        raise ValueError("logits must be finite")
    soft = ops.stable_softmax((logits + noise) * (1.0 / temperature))
    return ops.straight_through(soft, axis=-1) if hard else soft


def sample_gumbel_softmax(logits, temperature: float, rng: RngStream, hard: bool = False):
    """Draw Gumbel(0, 1) noise from ``rng`` and return the relaxed sample."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    noise = rng.gumbel(np.shape(ops.value(logits)))
    return gumbel_softmax(logits, temperature, noise, hard=hard)


def relaxed_bernoulli(logit, temperature: float, noise, hard: bool = False):
    """Two-category Gumbel-Softmax in closed form.

    ``noise`` is the difference of the two categories' Gumbel draws (a logistic
    variable). The first component of ``softmax((logit + g1, g2) / t)`` equals
    ``sigmoid((logit + g1 - g2) / t)``.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    soft = ops.sigmoid((logit + noise) * (1.0 / temperature))
    return ops.straight_through(soft) if hard else soft


def logistic_noise(rng: RngStream, size) -> np.ndarray:
    return rng.gumbel(size) - rng.gumbel(size)
