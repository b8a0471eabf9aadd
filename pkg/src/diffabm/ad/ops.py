"""Differentiable primitives that work on plain arrays, traced and dual values.

Simulators and losses are written once against these functions and run under
either AD mode (or none) depending on what they are fed.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from . import linear
from .base import Differentiable, _val
from .tape import detach

__all__ = [
    "value", "detach", "elementwise", "exp", "log", "sqrt", "tanh", "sigmoid", "softplus",
    "expm1", "log1p", "square", "stack", "sparse_dot", "where", "matmul",
    "stable_softmax", "logsumexp", "straight_through",
]


def value(x) -> np.ndarray:
    """Plain numpy value of ``x`` (no gradient information)."""
    return _val(x)


def elementwise(x, y, dy, kind: str = "elementwise"):
    """Wrap a precomputed elementwise result ``y`` with local derivative ``dy``."""
    if isinstance(x, Differentiable):
        return x._unary(y, dy, kind)
    return y


_elementwise = elementwise


def exp(x):
    y = np.exp(_val(x))
    return _elementwise(x, y, y, "exp")


def log(x):
    v = _val(x)
    if np.any(v <= 0):
        raise ValueError("log of non-positive input")
    return _elementwise(x, np.log(v), 1.0 / v, "log")


def sqrt(x):
    v = _val(x)
    if np.any(v <= 0):
        raise ValueError("sqrt of non-positive input")
    y = np.sqrt(v)
    return _elementwise(x, y, 0.5 / y, "sqrt")


def tanh(x):
    y = np.tanh(_val(x))
    return _elementwise(x, y, 1.0 - y * y, "tanh")


def sigmoid(x):
    y = expit(_val(x))
    return _elementwise(x, y, y * (1.0 - y), "sigmoid")


def softplus(x):
    v = _val(x)
    return _elementwise(x, np.logaddexp(0.0, v), expit(v), "softplus")


def expm1(x):
    v = _val(x)
    return _elementwise(x, np.expm1(v), np.exp(v), "expm1")


def log1p(x):
    v = _val(x)
    if np.any(v <= -1):
        raise ValueError("log1p of input <= -1")
    return _elementwise(x, np.log1p(v), 1.0 / (1.0 + v), "log1p")


def square(x):
    v = _val(x)
    return _elementwise(x, v * v, 2.0 * v, "square")


def matmul(a, b):
    return a @ b if isinstance(a, Differentiable) else np.asarray(a) @ b


def stack(xs, axis: int = 0):
    """Stack a sequence of scalars/arrays, any of which may be differentiable."""
    xs = list(xs)
    if not xs:
        raise ValueError("stack of empty sequence")
    y = np.stack([_val(x) for x in xs], axis=axis)
    kinds = {type(x) for x in xs if isinstance(x, Differentiable)}
    if not kinds:
        return y
    if len(kinds) > 1:
        raise TypeError("cannot stack traced and dual values together")
    return kinds.pop()._stack(xs, axis, y)


def sparse_dot(matrix: sp.spmatrix, x):
    """``matrix @ x`` for a constant sparse matrix and 1-d ``x``."""
    y = np.asarray(matrix @ _val(x))
    if isinstance(x, Differentiable):
        return x._linear(y, linear.SparsePartial(matrix), "sparse_dot")
    return y


def where(cond, a, b):
    """Elementwise select with a constant boolean mask."""
    cond = np.asarray(cond, dtype=bool)
    mask = cond.astype(float)
    return a * mask + b * (1.0 - mask)


def stable_softmax(logits, beta: float = 1.0, axis: int = -1):
    """Softmax of ``beta * logits`` with the maximum subtracted first."""
    v = _val(logits)
    if v.size == 0:
        raise ValueError("softmax of empty input")
    if not np.all(np.isfinite(v)) or not np.isfinite(beta):
        raise ValueError("softmax input must be finite")
    z = logits * beta
    shift = np.max(_val(z), axis=axis, keepdims=True)
    e = exp(z - shift)
    return e / e.sum(axis=axis, keepdims=True)


def logsumexp(x, axis: int = -1):
    v = _val(x)
    shift = np.max(v, axis=axis, keepdims=True)
    s = exp(x - shift).sum(axis=axis, keepdims=True)
    out = log(s) + shift
    return out.reshape(np.squeeze(_val(out), axis=axis).shape) if isinstance(out, Differentiable) \
        else np.squeeze(out, axis=axis)


def straight_through(soft, axis: int | None = None):
    """Hard values in the forward pass, gradients of ``soft``.

    With ``axis=None`` each entry is rounded (relaxed Bernoulli); otherwise the
    output is one-hot at the argmax along ``axis`` (relaxed categorical).
    """
    v = _val(soft)
    if axis is None:
        hard = np.round(v)
    else:
        hard = (v == np.max(v, axis=axis, keepdims=True)).astype(float)
    return soft + detach(hard - soft) if isinstance(soft, Differentiable) else hard
