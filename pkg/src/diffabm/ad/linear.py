"""Structured local partials for linear operations.

Elementwise operations store their local partial as a plain array. Operations
whose Jacobian is a structured linear map (sums, indexing, stacking, matrix
products) store one of the objects below instead. Each object knows how to push
a batch of tangents forward (leading axis = direction) and how to pull a
cotangent back to the parent's shape.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def expand_tangent(t: np.ndarray, ndim: int) -> np.ndarray:
    """Insert axes after the direction axis so ``t`` broadcasts against rank ``ndim``."""
    missing = ndim - (t.ndim - 1)
    if missing <= 0:
        return t
    return t.reshape((t.shape[0],) + (1,) * missing + t.shape[1:])


class LinearPartial:
    def push(self, t: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def pull(self, g: np.ndarray, shape: tuple) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError


class SumPartial(LinearPartial):
    def __init__(self, axis, keepdims: bool):
        self.axis = axis
        self.keepdims = keepdims

    def push(self, t):
        if self.axis is None:
            axes = tuple(range(1, t.ndim))
        else:
            axes = tuple(a % (t.ndim - 1) + 1 for a in np.atleast_1d(self.axis))
        return t.sum(axis=axes, keepdims=self.keepdims)

    def pull(self, g, shape):
        if self.axis is not None and not self.keepdims:
            axes = sorted(a % len(shape) for a in np.atleast_1d(self.axis))
            for a in axes:
                g = np.expand_dims(g, a)
        return np.broadcast_to(g, shape).copy()


class IndexPartial(LinearPartial):
    def __init__(self, index):
        self.index = index

    def push(self, t):
        idx = self.index if isinstance(self.index, tuple) else (self.index,)
        return t[(slice(None),) + idx]

    def pull(self, g, shape):
        out = np.zeros(shape)
        np.add.at(out, self.index, g)
        return out


class StackPartial(LinearPartial):
    """Partial of ``stack(xs, axis)`` w.r.t. its ``position``-th input."""

    def __init__(self, position: int, axis: int):
        self.position = position
        self.axis = axis

    def push(self, t):  # pragma: no cover - dual stacking is done directly
        raise NotImplementedError

    def pull(self, g, shape):
        return np.take(g, self.position, axis=self.axis).reshape(shape)


class ReshapePartial(LinearPartial):
    def __init__(self, out_shape: tuple):
        self.out_shape = out_shape

    def push(self, t):
        return t.reshape((t.shape[0],) + self.out_shape)

    def pull(self, g, shape):
        return g.reshape(shape)


class TransposePartial(LinearPartial):
    def push(self, t):
        return np.swapaxes(t, -1, -2)

    def pull(self, g, shape):
        return np.swapaxes(g, -1, -2).reshape(shape)


class MatmulLeftPartial(LinearPartial):
    """Partial of ``a @ b`` w.r.t. ``a`` (stores ``b``)."""

    def __init__(self, b: np.ndarray):
        self.b = b

    def push(self, t):
        return t @ self.b

    def pull(self, g, shape):
        b = self.b
        if b.ndim == 1:
            # (..., m) @ (m,) -> (...,)
            return unbroadcast(np.expand_dims(g, -1) * b, shape)
        if len(shape) == 1:
            return b @ g
        return unbroadcast(g @ np.swapaxes(b, -1, -2), shape)


def matmul_tangent(a: np.ndarray, t: np.ndarray, b_ndim: int) -> np.ndarray:
    """``a @ t[j]`` for each leading tangent direction ``j``."""
    if b_ndim == 1:
        return np.moveaxis(a @ np.swapaxes(t, 0, -1), -1, 0) if a.ndim > 1 else t @ a
    return a @ t


class MatmulRightPartial(LinearPartial):
    """Partial of ``a @ b`` w.r.t. ``b`` (stores ``a``)."""

    def __init__(self, a: np.ndarray, b_ndim: int = 2):
        self.a = a
        self.b_ndim = b_ndim

    def push(self, t):
        return matmul_tangent(self.a, t, self.b_ndim)

    def pull(self, g, shape):
        a = self.a
        if a.ndim == 1:
            if len(shape) == 1:
                return a * g
            return np.outer(a, g)
        if len(shape) == 1:
            return unbroadcast(np.swapaxes(a, -1, -2) @ np.expand_dims(g, -1), shape + (1,)).reshape(shape)
        return unbroadcast(np.swapaxes(a, -1, -2) @ g, shape)


class SparsePartial(LinearPartial):
    """Partial of ``M @ x`` for a constant sparse matrix ``M`` and 1-d ``x``."""

    def __init__(self, matrix: sp.spmatrix):
        self.matrix = matrix
        self._transpose = None

    def push(self, t):
        return np.asarray((self.matrix @ t.T).T)

    def pull(self, g, shape):
        if self._transpose is None:
            self._transpose = self.matrix.T.tocsr()
        return np.asarray(self._transpose @ g).reshape(shape)


def pull(partial, g: np.ndarray, shape: tuple) -> np.ndarray:
    """Apply a stored partial to cotangent ``g`` for a parent of ``shape``."""
    if isinstance(partial, LinearPartial):
        return partial.pull(g, shape)
    return unbroadcast(g * partial, shape)


def push(partial, t: np.ndarray, out_ndim: int) -> np.ndarray:
    """Apply a stored partial to a batch of tangents ``t``."""
    if isinstance(partial, LinearPartial):
        return partial.push(t)
    return expand_tangent(t, out_ndim) * partial
