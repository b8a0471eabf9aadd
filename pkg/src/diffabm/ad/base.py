"""Operator plumbing shared by traced (reverse) and dual (forward) values."""

from __future__ import annotations

import numpy as np

from . import linear


class Differentiable:
    """Mixin giving array-like operators to ``TracedValue`` and ``DualBatch``.

    Subclasses provide ``value`` plus three hooks: ``_unary`` (elementwise with a
    local derivative), ``_linear`` (structured linear map) and the classmethod
    ``_binary``.
    """

    __array_priority__ = 1000.0
    value: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def __len__(self) -> int:
        return len(self.value)

    def __float__(self) -> float:
        return float(self.value)

    def item(self) -> float:
        return float(self.value)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        b = _val(other)
        return binary(self, other, self.value + b, 1.0, 1.0, "add")

    def __radd__(self, other):
        return binary(other, self, _val(other) + self.value, 1.0, 1.0, "add")

    def __sub__(self, other):
        return binary(self, other, self.value - _val(other), 1.0, -1.0, "sub")

    def __rsub__(self, other):
        return binary(other, self, _val(other) - self.value, 1.0, -1.0, "sub")

    def __mul__(self, other):
        a, b = self.value, _val(other)
        return binary(self, other, a * b, b, a, "mul")

    def __rmul__(self, other):
        a, b = _val(other), self.value
        return binary(other, self, a * b, b, a, "mul")

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(other, self)

    def __neg__(self):
        return self._unary(-self.value, -1.0, "neg")

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    # structure ------------------------------------------------------------
    def __getitem__(self, index):
        return self._linear(self.value[index], linear.IndexPartial(index), "index")

    def sum(self, axis=None, keepdims: bool = False):
        y = self.value.sum(axis=axis, keepdims=keepdims)
        return self._linear(y, linear.SumPartial(axis, keepdims), "sum")

    def mean(self, axis=None, keepdims: bool = False):
        n = self.value.size if axis is None else np.prod([self.value.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        y = self.value.reshape(shape)
        return self._linear(y, linear.ReshapePartial(y.shape), "reshape")

    @property
    def T(self):
        return self._linear(np.swapaxes(self.value, -1, -2), linear.TransposePartial(), "transpose")


def _val(x) -> np.ndarray:
    if isinstance(x, Differentiable):
        return x.value
    return np.asarray(x, dtype=float)


def binary(a, b, y, da, db, kind: str):
    """Record a two-argument elementwise result ``y`` with partials ``da``, ``db``."""
    cls = _common_type(a, b)
    return cls._binary(a, b, np.asarray(y, dtype=float), da, db, kind)


def _common_type(a, b):
    ta = type(a) if isinstance(a, Differentiable) else None
    tb = type(b) if isinstance(b, Differentiable) else None
    if ta is not None and tb is not None and ta is not tb:
        raise TypeError(f"cannot combine {ta.__name__} with {tb.__name__}")
    return ta or tb


def divide(a, b):
    av, bv = _val(a), _val(b)
    if np.any(bv == 0):
        raise ZeroDivisionError("division by zero in differentiable value")
    y = av / bv
    return binary(a, b, y, 1.0 / bv, -y / bv, "div")


def power(a, b):
    av, bv = _val(a), _val(b)
    y = av**bv
    da = bv * av ** (bv - 1.0)
    if isinstance(b, Differentiable):
        if np.any(av <= 0):
            raise ValueError("pow with a differentiable exponent needs a positive base")
        db = y * np.log(av)
    else:
        db = 0.0
    if isinstance(a, Differentiable):
        return binary(a, b, y, da, db, "pow")
    return binary(a, b, y, 0.0, db, "pow")


def matmul(a, b):
    av, bv = _val(a), _val(b)
    cls = _common_type(a, b)
    return cls._matmul(a, b, av @ bv)
