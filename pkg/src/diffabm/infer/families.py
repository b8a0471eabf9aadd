"""Variational families and priors.

A family keeps its parameters as a list of numpy arrays. ``bind(tape)``
registers them as leaves on a tape; every density/sampling method takes an
optional ``params`` list so the same code runs with or without gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..ad import ops
from ..ad.rng import RngStream

LOG_2PI = math.log(2.0 * math.pi)


def standard_normal_log_prob(u):
    d = np.shape(ops.value(u))[-1]
    return ops.square(u).sum() * -0.5 - 0.5 * d * LOG_2PI


class Family:
    dim: int

    def parameters(self) -> list[np.ndarray]:
        return self._params

    def set_parameters(self, params) -> None:
        self._params = [np.array(p, dtype=float) for p in params]

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self._params)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self._params])

    def unflatten(self, vec) -> list[np.ndarray]:
        out, i = [], 0
        for p in self._params:
            out.append(np.asarray(vec[i:i + p.size], dtype=float).reshape(p.shape))
            i += p.size
        return out

    def bind(self, tape) -> list:
        return [tape.variable(p) for p in self._params]

    def _resolve(self, params):
        return self._params if params is None else params

    def base_noise(self, rng: RngStream) -> np.ndarray:
        return rng.normal(self.dim)

    def closed_form_kl(self, prior, params=None):
        return None

    def copy(self):
        raise NotImplementedError


class DiagonalGaussian(Family):
    """``theta = mean + exp(log_scale) * u`` with ``u ~ N(0, I)``."""

    def __init__(self, mean, log_scale):
        mean = np.asarray(mean, dtype=float)
        log_scale = np.broadcast_to(np.asarray(log_scale, dtype=float), mean.shape)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_scale))):
            raise ValueError("DiagonalGaussian parameters must be finite")
        self.dim = mean.size
        self._params = [mean.copy(), log_scale.copy()]

    @property
    def mean(self) -> np.ndarray:
        return self._params[0]

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self._params[1])

    def copy(self) -> "DiagonalGaussian":
        return DiagonalGaussian(*self._params)

    def rsample(self, u, params=None):
        mean, log_scale = self._resolve(params)
        theta = mean + ops.exp(log_scale) * u
        log_q = standard_normal_log_prob(u) - log_scale.sum()
        return theta, log_q

    def log_prob(self, theta, params=None):
        mean, log_scale = self._resolve(params)
        u = (theta - mean) * ops.exp(-log_scale)
        return standard_normal_log_prob(u) - log_scale.sum()

    def sample_values(self, u: np.ndarray) -> np.ndarray:
        return self.mean + self.scale * np.asarray(u, dtype=float)

    def closed_form_kl(self, prior, params=None):
        if not isinstance(prior, GaussianPrior):
            return None
        mean, log_scale = self._resolve(params)
        from ..objective import gaussian_kl

        return gaussian_kl(mean, log_scale, prior.mean, prior.scale)

    def to_dict(self) -> dict:
        return {"family": "diagonal_gaussian", "dim": self.dim,
                "mean": self.mean.tolist(), "log_scale": self._params[1].tolist()}


def _made_degrees(dim: int, hidden: int, n_hidden_layers: int):
    deg_in = np.arange(1, dim + 1)
    max_deg = max(1, dim - 1)
    deg_hidden = [np.arange(hidden) % max_deg + 1 for _ in range(n_hidden_layers)]
    return deg_in, deg_hidden


def made_masks(dim: int, hidden: int, n_hidden_layers: int = 2):
    """Masks for a MADE network whose output ``i`` sees only inputs ``< i``."""
    deg_in, deg_hidden = _made_degrees(dim, hidden, n_hidden_layers)
    masks = [(deg_hidden[0][:, None] >= deg_in[None, :]).astype(float)]
    for k in range(1, n_hidden_layers):
        masks.append((deg_hidden[k][:, None] >= deg_hidden[k - 1][None, :]).astype(float))
    out = (deg_in[:, None] > deg_hidden[-1][None, :]).astype(float)
    masks.append(np.concatenate([out, out], axis=0))  # shift rows, then scale rows
    return masks


SCALE_FLOOR = 1e-3
_SCALE_OFFSET = float(np.log(np.expm1(1.0 - SCALE_FLOOR)))


class MaskedAffineAutoregressiveFlow(Family):
    """Stack of masked affine autoregressive layers over a standard normal base.

    Each layer maps ``z -> z * scale(z) + shift(z)`` where ``shift_i`` and
    ``scale_i`` depend only on ``z_{<i}`` through a masked network with two
    hidden blocks. Sampling is one pass; evaluating the density of an arbitrary
    point inverts each layer by ``dim`` fixed-point sweeps. Layers alternate the
    variable order by reversal. The output layer starts at zero so the
    untrained flow is the identity map.
    """

    def __init__(self, dim: int, n_layers: int = 16, hidden: int = 20, n_blocks: int = 2,
                 seed: int = 0, init_scale: float = 1.0):
        if dim < 1 or n_layers < 1 or hidden < 1 or n_blocks < 1:
            raise ValueError("flow sizes must be positive")
        self.dim, self.n_layers, self.hidden, self.n_blocks = dim, n_layers, hidden, n_blocks
        self.masks = made_masks(dim, hidden, n_blocks)
        self.perm = np.arange(dim)[::-1].copy()
        rng = RngStream(seed, 0xF10)
        params = []
        for _ in range(n_layers):
            fan_in = dim
            for k in range(n_blocks):
                w = rng.normal((hidden, fan_in)) * init_scale / np.sqrt(fan_in)
                params += [w, np.zeros(hidden)]
                fan_in = hidden
            params += [np.zeros((2 * dim, hidden)), np.zeros(2 * dim)]
        self._params = params
        self._per_layer = 2 * n_blocks + 2

    def copy(self) -> "MaskedAffineAutoregressiveFlow":
        new = object.__new__(MaskedAffineAutoregressiveFlow)
        new.__dict__.update(self.__dict__)
        new._params = [p.copy() for p in self._params]
        return new

    def _layer_params(self, params, layer):
        k = self._per_layer
        return params[layer * k:(layer + 1) * k]

    def _shift_scale(self, z, lp):
        h = z
        for k in range(self.n_blocks):
            w, b = lp[2 * k], lp[2 * k + 1]
            h = ops.tanh(ops.matmul(w * self.masks[k], h) + b)
        w, b = lp[-2], lp[-1]
        out = ops.matmul(w * self.masks[-1], h) + b
        shift = out[: self.dim]
        scale = ops.softplus(out[self.dim:] + _SCALE_OFFSET) + SCALE_FLOOR
        return shift, scale

    def rsample(self, u, params=None):
        params = self._resolve(params)
        z = u
        log_q = standard_normal_log_prob(u)
        for layer in range(self.n_layers):
            lp = self._layer_params(params, layer)
            shift, scale = self._shift_scale(z, lp)
            z = z * scale + shift
            log_q = log_q - ops.log(scale).sum()
            if layer < self.n_layers - 1:
                z = z[self.perm]
        return z, log_q

    def sample_values(self, u: np.ndarray) -> np.ndarray:
        """Push a batch of base draws ``u`` (rows) through the flow, values only."""
        z = np.asarray(u, dtype=float).T
        for layer in range(self.n_layers):
            lp = self._layer_params(self._params, layer)
            h = z
            for k in range(self.n_blocks):
                h = np.tanh((lp[2 * k] * self.masks[k]) @ h + lp[2 * k + 1][:, None])
            out = (lp[-2] * self.masks[-1]) @ h + lp[-1][:, None]
            scale = np.logaddexp(0.0, out[self.dim:] + _SCALE_OFFSET) + SCALE_FLOOR
            z = z * scale + out[: self.dim]
            if layer < self.n_layers - 1:
                z = z[self.perm]
        return z.T

    def log_prob(self, theta, params=None):
        """Density of an arbitrary point (differentiable w.r.t. the parameters)."""
        params = self._resolve(params)
        z = theta
        log_det = 0.0
        for layer in reversed(range(self.n_layers)):
            if layer < self.n_layers - 1:
                z = z[np.argsort(self.perm)]
            lp = self._layer_params(params, layer)
            z_in = ops.value(z) * 0.0
            for _ in range(self.dim):
                shift, scale = self._shift_scale(z_in, lp)
                z_in = (z - shift) / scale
            shift, scale = self._shift_scale(z_in, lp)
            log_det = log_det + ops.log(scale).sum()
            z = z_in
        return standard_normal_log_prob(z) - log_det

    def to_dict(self) -> dict:
        return {"family": "maf", "dim": self.dim, "n_layers": self.n_layers,
                "hidden": self.hidden, "n_blocks": self.n_blocks,
                "params": [p.tolist() for p in self._params]}


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def standard(cls, dim: int) -> "GaussianPrior":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def log_prob(self, theta):
        u = (theta - self.mean) * (1.0 / self.scale)
        return standard_normal_log_prob(u) - float(np.log(self.scale).sum())

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        return self.mean + self.scale * rng.normal((n, self.dim))


@dataclass
class ReparamSample:
    theta: object
    log_q: object
    noise: np.ndarray
    params: list | None


def sample_reparam(q: Family, rng: RngStream, params=None, tape=None) -> ReparamSample:
    """Draw ``theta = T_phi(u)`` with its log-density under ``q``.

    Pass ``tape`` to record a fresh set of parameter leaves, or ``params`` to
    reuse leaves that are already bound.
    """
    if params is None and tape is not None:
        params = q.bind(tape)
    u = q.base_noise(rng)
    theta, log_q = q.rsample(u, params)
    return ReparamSample(theta, log_q, u, params)


def family_from_dict(data: dict) -> Family:
    if data["family"] == "diagonal_gaussian":
        return DiagonalGaussian(data["mean"], data["log_scale"])
    if data["family"] == "maf":
        q = MaskedAffineAutoregressiveFlow(data["dim"], data["n_layers"], data["hidden"], data["n_blocks"])
        q.set_parameters([np.asarray(p) for p in data["params"]])
        return q
    raise ValueError(f"unknown family {data['family']!r}")
