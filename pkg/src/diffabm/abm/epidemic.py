"""Differentiable S/I/R-style epidemic on a synthetic population.

Discrete infection events are replaced by Gumbel-Softmax relaxed Bernoulli
draws, so every agent carries a soft infection mass in [0, 1]. Mass acquired on
day ``s`` is infectious on days ``s+1 .. s+D`` and then recovers.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..ad import ops
from ..ad.gumbel import logistic_noise, relaxed_bernoulli
from ..ad.rng import RngStream
from .population import DEFAULT_GROUPS, LOCATION_TYPES, Population, durations

RATE_FLOOR = 1e-10

TRUE_BETAS = {
    "household": 0.6, "care_home": 0.6,
    "school": 0.4, "company": 0.4, "university": 0.4,
    "pub": 0.1, "shop": 0.1, "gym": 0.1, "cinema": 0.1, "visit": 0.1,
}
TRUE_I0_FRACTION = 10 ** -3.5


@dataclass(frozen=True)
class EpiParams:
    betas: tuple  # one contact intensity per entry of LOCATION_TYPES
    i0_fraction: float

    def __post_init__(self):
        if len(self.betas) != len(LOCATION_TYPES):
            raise ValueError(f"need {len(LOCATION_TYPES)} contact intensities")
        if any(b < 0 for b in self.betas):
            raise ValueError("contact intensities must be non-negative")
        if not 0.0 < self.i0_fraction < 1.0:
            raise ValueError("initial infected fraction must lie in (0, 1)")

    @classmethod
    def ground_truth(cls) -> "EpiParams":
        return cls(tuple(TRUE_BETAS[k] for k in LOCATION_TYPES), TRUE_I0_FRACTION)

    @classmethod
    def from_dict(cls, data: dict) -> "EpiParams":
        return cls(tuple(float(data["betas"][k]) for k in LOCATION_TYPES), float(data["i0_fraction"]))

    def to_dict(self) -> dict:
        return {"betas": dict(zip(LOCATION_TYPES, self.betas)), "i0_fraction": self.i0_fraction}


@dataclass(frozen=True)
class EpiConfig:
    days: int = 50
    infectious_days: int = 5
    temperature: float = 0.5
    mode: str = "soft"

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if self.infectious_days < 1:
            raise ValueError("infectious_days must be >= 1")
        if self.temperature <= 0:
            raise ValueError("Gumbel-Softmax temperature must be positive")
        if self.mode not in ("soft", "straight-through"):
            raise ValueError("mode must be 'soft' or 'straight-through'")


@dataclass
class EpiState:
    mass: object            # final per-agent infection mass
    daily: object           # new infections on days 1..T
    seeded: object          # infection mass seeded on day 0
    history: list = field(default_factory=list, repr=False)

    @property
    def cumulative(self) -> np.ndarray:
        """Cumulative infections on days 0..T (values only)."""
        return float(ops.value(self.seeded)) + np.concatenate([[0.0], np.cumsum(ops.value(self.daily))])


def infection_probability(beta, load, dt: float = 1.0, susceptibility: float = 1.0):
    """``1 - exp(-susceptibility * beta * dt * load)``."""
    for name, v in (("beta", beta), ("load", load), ("dt", dt), ("susceptibility", susceptibility)):
        if np.any(ops.value(v) < 0):
            raise ValueError(f"{name} must be non-negative")
    return -ops.expm1(-(beta * load * dt * susceptibility))


def _logit_from_rate(rate):
    """logit(1 - exp(-r)) = r + log(1 - exp(-r)), with r floored to stay finite."""
    r = rate + RATE_FLOOR
    return r + ops.log(-ops.expm1(-r))


def infection_draw(rate, noise, temperature: float, hard: bool = False):
    """Relaxed Bernoulli draw with success probability ``1 - exp(-rate)``.

    Fused into one primitive: the composite of rate -> logit -> sigmoid costs
    eight tape entries per agent per day otherwise. Rates below zero (rounding
    in the exposure sum) are treated as zero.
    """
    r = np.maximum(ops.value(rate), 0.0) + RATE_FLOOR
    logit = r + np.log(-np.expm1(-r))
    soft = expit((logit + noise) / temperature)
    d = soft * (1.0 - soft) / (temperature * -np.expm1(-r))
    out = ops.elementwise(rate, soft, d, "infection_draw")
    return ops.straight_through(out) if hard else out


def epi_simulate(betas, i0_fraction, pop: Population, rng: RngStream, config: EpiConfig = EpiConfig(),
                 group_config: dict | None = None, record: bool = False) -> EpiState:
    """Run the relaxed epidemic for ``config.days`` days.

    ``betas`` (one per location type) and ``i0_fraction`` may be plain, traced
    or dual values; noise is drawn from ``rng`` and is independent of them.
    """
    if config.temperature <= 0:
        raise ValueError("Gumbel-Softmax temperature must be positive")
    n = pop.n_agents
    hard = config.mode == "straight-through"
    tau = config.temperature
    groups, owner, attends, groups_t = pop.group_structure(LOCATION_TYPES)
    weights = durations(group_config or DEFAULT_GROUPS)
    if not isinstance(betas, ops.Differentiable):
        betas = np.asarray(betas, dtype=float)
    if np.any(ops.value(betas) < 0):
        raise ValueError("contact intensities must be non-negative")
    psi = pop.susceptibility

    i0v = float(ops.value(i0_fraction))
    if not 0.0 < i0v < 1.0:
        raise ValueError("initial infected fraction must lie in (0, 1)")
    seed_logit = ops.log(i0_fraction) - ops.log1p(-i0_fraction)
    seed_noise = logistic_noise(rng.spawn("seed"), n)
    mass = relaxed_bernoulli(seed_logit + np.zeros(n), tau, seed_noise, hard)
    seeded = mass.sum()

    # Agent i's exposure at location type L is the infectious mass of its
    # group there minus its own; weighting per group row keeps this sparse.
    bw = betas * weights
    group_w = bw[owner]
    self_w = ops.matmul(attends, bw)

    window = deque([mass])
    infectious = mass
    daily, history = [], []
    for day in range(1, config.days + 1):
        loads = ops.sparse_dot(groups, infectious)
        rate = (ops.sparse_dot(groups_t, loads * group_w) - self_w * infectious) * psi
        noise = logistic_noise(rng.spawn("day", day), n)
        new = (1.0 - mass) * infection_draw(rate, noise, tau, hard)
        mass = mass + new
        window.append(new)
        infectious = infectious + new
        if len(window) > config.infectious_days:
            infectious = infectious - window.popleft()
        total = new.sum()
        if not np.isfinite(ops.value(total)):
            raise FloatingPointError(f"non-finite infections on day {day}")
        daily.append(total)
        if record:
            history.append(ops.value(mass).copy())
    return EpiState(mass, ops.stack(daily), seeded, history)
