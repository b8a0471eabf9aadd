"""Forward-mode AD with a batch of tangent directions."""

from __future__ import annotations

import numpy as np

from . import linear
from .base import Differentiable, _val


class DualBatch(Differentiable):
    """Value plus ``k`` tangents, stored as an array of shape ``(k, *value.shape)``."""

    __slots__ = ("value", "tangents")

    def __init__(self, value, tangents):
        self.value = np.asarray(value, dtype=float)
        tangents = np.asarray(tangents, dtype=float)
        if tangents.shape[1:] != self.value.shape:
            tangents = np.broadcast_to(tangents, (tangents.shape[0],) + self.value.shape)
        self.tangents = tangents

    @classmethod
    def constant(cls, value, k: int) -> "DualBatch":
        value = np.asarray(value, dtype=float)
        return cls(value, np.zeros((k,) + value.shape))

    @property
    def k(self) -> int:
        return self.tangents.shape[0]

    def __repr__(self) -> str:
        return f"DualBatch({self.value!r}, k={self.k})"

    def detach(self) -> "DualBatch":
        return DualBatch.constant(self.value, self.k)

    # hooks -----------------------------------------------------------------
    def _unary(self, y, dy, kind):
        y = np.asarray(y, dtype=float)
        return DualBatch(y, linear.push(dy, self.tangents, y.ndim))

    def _linear(self, y, partial, kind):
        return DualBatch(y, partial.push(self.tangents))

    @classmethod
    def _binary(cls, a, b, y, da, db, kind):
        k = _shared_k(a, b)
        full = (k,) + y.shape
        t, owned = None, False
        for x, d in ((a, da), (b, db)):
            if isinstance(x, DualBatch):
                term = linear.push(d, x.tangents, y.ndim)
                if t is None:
                    t, owned = term, isinstance(d, np.ndarray) and term.shape == full
                elif owned:
                    t += term
                else:
                    t = t + term
        return DualBatch(y, np.broadcast_to(t, full))

    @classmethod
    def _matmul(cls, a, b, y):
        k = _shared_k(a, b)
        av, bv = _val(a), _val(b)
        t = 0.0
        if isinstance(a, DualBatch):
            t = t + a.tangents @ bv
        if isinstance(b, DualBatch):
            t = t + linear.matmul_tangent(np.asarray(av), b.tangents, np.ndim(bv))
        return DualBatch(y, np.broadcast_to(t, (k,) + np.shape(y)))

    @classmethod
    def _stack(cls, xs, axis, y):
        k = _shared_k(*xs)
        ts = [x.tangents if isinstance(x, DualBatch) else np.zeros((k,) + np.shape(x)) for x in xs]
        ax = axis if axis < 0 else axis + 1
        return DualBatch(y, np.stack(ts, axis=ax))


def _shared_k(*xs) -> int:
    k = None
    for x in xs:
        if isinstance(x, DualBatch):
            if k is None:
                k = x.k
            elif x.k != k:
                raise ValueError(f"DualBatch direction counts differ ({k} vs {x.k})")
    return k


def forward_jacobian(program, inputs, chunk: int | None = None) -> np.ndarray:
    """Gradient of a scalar ``program`` w.r.t. ``inputs`` by forward mode.

    All ``d`` directions are carried in one pass by default; ``chunk`` splits
    them into passes of at most ``chunk`` directions.
    """
    x0 = np.asarray(inputs, dtype=float)
    d = x0.size
    chunk = d if chunk is None else chunk
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    eye = np.eye(d).reshape((d,) + x0.shape)
    out = np.zeros(d)
    for start in range(0, d, chunk):
        stop = min(start + chunk, d)
        y = program(DualBatch(x0, eye[start:stop]))
        if isinstance(y, DualBatch):
            out[start:stop] = y.tangents.reshape(stop - start)
    return out.reshape(x0.shape)


def value_and_jacobian(program, inputs):
    """Like :func:`forward_jacobian` but also return the program value."""
    x0 = np.asarray(inputs, dtype=float)
    d = x0.size
    y = program(DualBatch(x0, np.eye(d).reshape((d,) + x0.shape)))
    if isinstance(y, DualBatch):
        return float(y.value), y.tangents.reshape(x0.shape)
    return float(np.asarray(y)), np.zeros(x0.shape)
