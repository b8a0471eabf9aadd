"""Monte Carlo estimators of the gradient of an expected loss.

Every estimator draws sample ``n`` from ``rng.spawn("base", n)`` (variational
noise) and ``rng.spawn("sim", n)`` (simulator noise), so estimators called with
the same ``rng`` see common random numbers. Each sample gets its own tape.

Loss functions are callables ``loss_fn(theta, rng, horizon=None)`` written
with :mod:`diffabm.ad.ops`, so they run on plain, traced or dual inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ad import ops
from ..ad.dual import value_and_jacobian
from ..ad.rng import RngStream
from ..ad.tape import Tape
from .families import Family, sample_reparam

ESTIMATORS = ("pathwise", "score", "hybrid")


class SimulatorFailure(RuntimeError):
    pass


@dataclass
class GradientEstimate:
    """Per-component mean and spread of per-sample gradient estimates."""

    mean: np.ndarray
    std: np.ndarray
    n: int
    samples: np.ndarray | None = None

    @classmethod
    def from_samples(cls, samples: np.ndarray, keep: bool = True) -> "GradientEstimate":
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        n = samples.shape[0]
        std = samples.std(axis=0, ddof=1) if n > 1 else np.zeros(samples.shape[1])
        return cls(samples.mean(axis=0), std, n, samples if keep else None)

    @property
    def stderr(self) -> np.ndarray:
        return self.std / np.sqrt(self.n)


@dataclass
class SampleTerms:
    """Per-sample pieces of the objective gradient."""

    loss_grads: np.ndarray      # (N, F) gradients of the loss term
    losses: np.ndarray          # (N,)
    kl_grads: np.ndarray | None  # (N, F) or (1, F) for closed form
    kls: np.ndarray | None


def _flatten(grads, params) -> np.ndarray:
    return np.concatenate([grads[p].ravel() for p in params])


def sample_terms(q: Family, loss_fn, n: int, rng: RngStream, estimator: str = "pathwise",
                 horizon=None, prior=None, kl: str = "auto") -> SampleTerms:
    """Per-sample loss gradients (and KL gradients when ``prior`` is given)."""
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    if n < 1:
        raise ValueError("need at least one Monte Carlo sample")
    closed = None
    if prior is not None and kl in ("auto", "closed"):
        tape = Tape()
        params = q.bind(tape)
        closed = q.closed_form_kl(prior, params)
        if closed is None and kl == "closed":
            raise ValueError("no closed-form KL for this family/prior")
        if closed is not None:
            closed_grad = _flatten(tape.backward(closed), params)[None, :]
    F = q.num_params
    loss_grads = np.zeros((n, F))
    losses = np.zeros(n)
    kl_grads = np.zeros((n, F)) if prior is not None and closed is None else None
    kls = np.zeros(n) if kl_grads is not None else None
    for i in range(n):
        tape = Tape()
        params = q.bind(tape)
        s = sample_reparam(q, rng.spawn("base", i), params=params)
        if kl_grads is not None:
            kl_i = s.log_q - prior.log_prob(s.theta)
            if not np.isfinite(kl_i.value):
                raise ValueError(f"prior density is zero at theta={ops.value(s.theta)}")
            kls[i] = kl_i.item()
            kl_grads[i] = _flatten(tape.backward(kl_i), params)
        sim_rng = rng.spawn("sim", i)
        try:
            if estimator == "pathwise":
                loss = loss_fn(s.theta, sim_rng, horizon)
                losses[i] = float(ops.value(loss))
                if hasattr(loss, "node") and loss.node is not None:
                    loss_grads[i] = _flatten(tape.backward(loss), params)
            elif estimator == "score":
                theta = ops.value(s.theta).copy()
                losses[i] = float(ops.value(loss_fn(theta, sim_rng, horizon)))
                log_q = q.log_prob(theta, params)
                loss_grads[i] = losses[i] * _flatten(tape.backward(log_q), params)
            else:
                theta = ops.value(s.theta).copy()
                value, jac = value_and_jacobian(lambda th: loss_fn(th, rng.spawn("sim", i), horizon), theta)
                losses[i] = value
                loss_grads[i] = _flatten(tape.backward(s.theta, seed=jac), params)
        except (FloatingPointError, ValueError) as exc:
            raise SimulatorFailure(f"sample {i}: {exc}") from exc
    if closed is not None:
        kl_grads, kls = closed_grad, np.array([closed.item()])
    return SampleTerms(loss_grads, losses, kl_grads, kls)


def pathwise_gradient(q: Family, loss_fn, horizon, n: int, rng: RngStream) -> GradientEstimate:
    """Reparameterised estimate, backpropagating through the simulator at ``horizon``."""
    return GradientEstimate.from_samples(sample_terms(q, loss_fn, n, rng, "pathwise", horizon).loss_grads)


def score_gradient(q: Family, loss_fn, n: int, rng: RngStream, horizon=None) -> GradientEstimate:
    """Score-function estimate ``loss * grad log q``; the simulator runs without gradients."""
    return GradientEstimate.from_samples(sample_terms(q, loss_fn, n, rng, "score", horizon).loss_grads)


def hybrid_gradient(q: Family, loss_fn, n: int, rng: RngStream, horizon=None) -> GradientEstimate:
    """Forward-mode Jacobian of the loss w.r.t. theta, pulled back through the flow tape."""
    return GradientEstimate.from_samples(sample_terms(q, loss_fn, n, rng, "hybrid", horizon).loss_grads)


def estimate(estimator: str, q: Family, loss_fn, n: int, rng: RngStream, horizon=None) -> GradientEstimate:
    return GradientEstimate.from_samples(sample_terms(q, loss_fn, n, rng, estimator, horizon).loss_grads)
