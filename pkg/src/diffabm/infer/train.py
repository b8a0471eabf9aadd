"""Generalised variational inference training loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..ad.rng import RngStream
from ..objective import GviConfig
from .estimators import sample_terms
from .families import Family
from .optim import OptimizerState, optimizer_step

LOG_COLUMNS = ("epoch", "objective", "loss_term", "kl_term", "objective_ma10")
MOVING_AVERAGE = 10


class TrainingAborted(FloatingPointError):
    pass


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)

    def append(self, epoch, objective, loss_term, kl_term, wall):
        window = [r[1] for r in self.rows[-(MOVING_AVERAGE - 1):]] + [objective]
        self.rows.append((epoch, objective, loss_term, kl_term, float(np.mean(window))))
        self.wall_times.append(wall)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[LOG_COLUMNS.index(name)] for r in self.rows])

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class TrainingResult:
    q: Family
    log: TrainingLog
    state: OptimizerState


def train(q: Family, prior, loss_fn, estimator: str = "pathwise", config: GviConfig = GviConfig(),
          epochs: int = 2000, seed: int = 0, horizon=None, lr: float = 1e-3,
          weight_decay: float = 0.01, kl: str = "auto", callback=None) -> TrainingResult:
    """Minimise the GVI objective over ``q``'s parameters with AdamW.

    Epoch ``e`` draws its samples from ``RngStream(seed).spawn("epoch", e)``, so
    a run is a deterministic function of ``seed``. ``q`` is not modified; the
    trained family is returned in the result.
    """
    q = q.copy()
    state = OptimizerState.for_params(q.parameters(), lr=lr, weight_decay=weight_decay)
    log = TrainingLog()
    root = RngStream(seed)
    start = time.perf_counter()
    for epoch in range(epochs):
        terms = sample_terms(q, loss_fn, config.n_samples, root.spawn("epoch", epoch), estimator,
                             horizon, prior, kl)
        loss_term = float(terms.losses.mean())
        kl_term = float(terms.kls.mean())
        objective = config.loss_weight * loss_term + config.kl_weight * kl_term
        if not np.isfinite(objective):
            raise TrainingAborted(f"non-finite objective at epoch {epoch}")
        grad = config.loss_weight * terms.loss_grads.mean(axis=0) + config.kl_weight * terms.kl_grads.mean(axis=0)
        state, new_params = optimizer_step(state, q.parameters(), q.unflatten(grad))
        q.set_parameters(new_params)
        log.append(epoch, objective, loss_term, kl_term, time.perf_counter() - start)
        if callback is not None:
            callback(epoch, log)
    return TrainingResult(q, log, state)
