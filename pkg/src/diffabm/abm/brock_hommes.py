"""Brock & Hommes heterogeneous-belief asset pricing model.

Prices follow

    x_t = (1/R) * [ sum_j n_jt (g_j x_{t-1} + b_j) + sigma * eps_t ]

with strategy shares ``n_jt`` given by a softmax (intensity ``beta``) over the
realised profits ``U_j = (x_{t-1} - R x_{t-2}) (g_j x_{t-3} + b_j - R x_{t-2})``.

The four calibrated parameters are ``(g2, g3, b2, b3)``; the other strategy
coefficients are fixed at ``g1 = b1 = b4 = 0`` and ``g4 = 1.01``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..ad import ops
from ..ad.tape import detach

TRUE_THETA = np.array([0.9, 0.9, 0.2, -0.2])
PARAM_NAMES = ("g2", "g3", "b2", "b3")


@dataclass(frozen=True)
class BHParams:
    g2: float
    g3: float
    b2: float
    b3: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_array()):
            raise ValueError("BH parameters must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.g2, self.g3, self.b2, self.b3], dtype=float)


@dataclass(frozen=True)
class BHAux:
    R: float = 1.01
    beta: float = 120.0
    sigma: float = 0.04
    J: int = 4
    T: int = 100
    g4: float = 1.01

    def __post_init__(self):
        if self.R <= 0 or self.sigma <= 0 or self.beta < 0:
            raise ValueError("need R > 0, sigma > 0, beta >= 0")
        if self.J != 4:
            raise ValueError("the (g2, g3, b2, b3) parameterisation uses exactly J = 4 strategies")
        if self.T < 1:
            raise ValueError("T must be >= 1")


@dataclass
class Trajectory:
    prices: object  # length-T vector (array, traced or dual)
    noise: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.noise)


def strategy_coefficients(theta, aux: BHAux):
    """Trend and bias vectors ``(g, b)`` of the four strategies."""
    g = ops.stack([0.0, theta[0], theta[1], aux.g4])
    b = ops.stack([0.0, theta[2], theta[3], 0.0])
    return g, b


def bh_transition(x1, x2, x3, g, b, aux: BHAux):
    """Deterministic part of ``x_t`` given lags ``x_{t-1}, x_{t-2}, x_{t-3}``."""
    R = aux.R
    excess = x1 - R * x2
    utility = excess * (g * x3 + b - R * x2)
    shares = ops.stable_softmax(utility, aux.beta)
    return (shares * (g * x1 + b)).sum() * (1.0 / R)


def bh_simulate(theta, noise, aux: BHAux = BHAux(), horizon: float | None = None) -> Trajectory:
    """Simulate ``len(noise)`` prices from ``x_{-2} = x_{-1} = x_0 = 0``.

    ``horizon`` is the gradient horizon H: a lag ``x_{t-h}`` feeding ``x_t`` is
    detached whenever ``h > H``. ``None`` (or ``inf``) keeps the full graph.
    Values never depend on the horizon.
    """
    noise = np.asarray(noise, dtype=float)
    if noise.ndim != 1:
        raise ValueError("noise must be a 1-d sequence")
    if horizon is not None and horizon < 0:
        raise ValueError("gradient horizon must be non-negative")
    keep = 3 if horizon is None or horizon >= 3 else int(horizon)
    g, b = strategy_coefficients(theta, aux)
    shock = aux.sigma / aux.R
    xs = [0.0, 0.0, 0.0]
    for t, eps in enumerate(noise, start=1):
        lags = [xs[-h] if h <= keep else detach(xs[-h]) for h in (1, 2, 3)]
        x = bh_transition(lags[0], lags[1], lags[2], g, b, aux) + shock * eps
        if not np.isfinite(ops.value(x)):
            raise FloatingPointError(f"non-finite price at t={t}")
        xs.append(x)
    return Trajectory(ops.stack(xs[3:]), noise)


def bh_mean_first_step(theta, aux: BHAux = BHAux()) -> float:
    """Closed form of E[x_1]: all lags are zero so the shares are uniform."""
    _, b = strategy_coefficients(np.asarray(theta, dtype=float), aux)
    return float(np.mean(b) / aux.R)
