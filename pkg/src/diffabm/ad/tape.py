"""Tape-based reverse-mode automatic differentiation.

A :class:`Tape` is an append-only list of nodes. Each node remembers its parent
node indices and the local partial of its output with respect to each parent,
computed when the node is recorded. :meth:`Tape.backward` is then a single
sweep over the nodes in decreasing index order.

Values are numpy arrays (0-d for scalars). Elementwise partials are arrays;
structured partials (sums, indexing, matrix products) are the small objects in
:mod:`diffabm.ad.linear`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import linear
from .base import Differentiable, _val


class TapeError(RuntimeError):
    """Raised on illegal tape use (mixing tapes, foreign outputs)."""


@dataclass(frozen=True)
class TapeNode:
    kind: str
    parents: tuple
    partials: tuple
    shape: tuple


_recorders: list = []


class TapeRecorder:
    """Context manager collecting every tape created while it is active."""

    def __init__(self):
        self.tapes: list = []

    def __enter__(self) -> "TapeRecorder":
        _recorders.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _recorders.remove(self)

    @property
    def node_count(self) -> int:
        return sum(t.node_count for t in self.tapes)


class Tape:
    """Append-only record of a reverse-mode computation."""

    def __init__(self):
        for r in _recorders:
            r.tapes.append(self)
        self._kinds: list[str] = []
        self._parents: list[tuple] = []
        self._partials: list[tuple] = []
        self._shapes: list[tuple] = []
        self.entries = 0

    def __len__(self) -> int:
        return len(self._kinds)

    @property
    def node_count(self) -> int:
        """Scalar-equivalent node count: one per output element of every node."""
        return self.entries

    def node(self, index: int) -> TapeNode:
        return TapeNode(self._kinds[index], self._parents[index], self._partials[index], self._shapes[index])

    def variable(self, value) -> "TracedValue":
        """Create a leaf (input) node."""
        return self._push("input", np.array(value, dtype=float), (), ())

    def _push(self, kind, value, parents, partials) -> "TracedValue":
        index = len(self._kinds)
        self._kinds.append(kind)
        self._parents.append(parents)
        self._partials.append(partials)
        self._shapes.append(value.shape)
        self.entries += max(value.size, 1)
        return TracedValue(value, index, self)

    def backward(self, output, seed=None) -> "Gradients":
        """Reverse sweep from ``output``.

        ``output`` may be a single traced value or a sequence of them; ``seed``
        is the matching cotangent (or sequence of cotangents), defaulting to
        ones. Seeding several outputs computes a vector-Jacobian product.
        """
        if isinstance(output, TracedValue):
            outputs, seeds = [output], [seed]
        else:
            outputs = list(output)
            seeds = list(seed) if seed is not None else [None] * len(outputs)
        adjoints: dict[int, np.ndarray] = {}
        for out, s in zip(outputs, seeds):
            if not isinstance(out, TracedValue) or out.tape is not self:
                raise TapeError("output does not belong to this tape")
            if out.node is None:
                continue
            s = np.ones(out.shape) if s is None else np.broadcast_to(np.asarray(s, dtype=float), out.shape)
            prev = adjoints.get(out.node)
            adjoints[out.node] = s if prev is None else prev + s
        leaves: dict[int, np.ndarray] = {}
        if not adjoints:
            return Gradients(self, leaves)
        parents_of, partials_of, shapes = self._parents, self._partials, self._shapes
        for i in range(max(adjoints), -1, -1):
            g = adjoints.pop(i, None)
            if g is None:
                continue
            parents = parents_of[i]
            if not parents:
                leaves[i] = g
                continue
            for p, partial in zip(parents, partials_of[i]):
                c = linear.pull(partial, g, shapes[p])
                prev = adjoints.get(p)
                adjoints[p] = c if prev is None else prev + c
        return Gradients(self, leaves)


class Gradients:
    """Adjoints of leaf nodes after a backward sweep."""

    def __init__(self, tape: Tape, adjoints: dict):
        self.tape = tape
        self.adjoints = adjoints

    def __getitem__(self, x: "TracedValue") -> np.ndarray:
        if x.node is None:
            return np.zeros(x.shape)
        if x.tape is not self.tape:
            raise TapeError("value does not belong to this tape")
        g = self.adjoints.get(x.node)
        return np.zeros(x.shape) if g is None else np.array(g)

    def __contains__(self, node: int) -> bool:
        return node in self.adjoints

    def items(self):
        return self.adjoints.items()


class TracedValue(Differentiable):
    """A value recorded on a tape, or detached (``node is None``)."""

    __slots__ = ("value", "node", "tape")

    def __init__(self, value, node: int | None = None, tape: Tape | None = None):
        self.value = np.asarray(value, dtype=float)
        self.node = node
        self.tape = tape

    def __repr__(self) -> str:
        where = "detached" if self.node is None else f"node={self.node}"
        return f"TracedValue({self.value!r}, {where})"

    @property
    def attached(self) -> bool:
        return self.node is not None

    # hooks -----------------------------------------------------------------
    def _unary(self, y, dy, kind):
        if self.node is None:
            return TracedValue(y)
        return self.tape._push(kind, np.asarray(y, dtype=float), (self.node,), (dy,))

    def _linear(self, y, partial, kind):
        if self.node is None:
            return TracedValue(y)
        return self.tape._push(kind, np.asarray(y, dtype=float), (self.node,), (partial,))

    @classmethod
    def _binary(cls, a, b, y, da, db, kind):
        tape = _shared_tape(a, b)
        if tape is None:
            return TracedValue(y)
        parents, partials = [], []
        for x, d in ((a, da), (b, db)):
            if isinstance(x, TracedValue) and x.node is not None:
                parents.append(x.node)
                partials.append(d)
        return tape._push(kind, y, tuple(parents), tuple(partials))

    @classmethod
    def _matmul(cls, a, b, y):
        av, bv = _val(a), _val(b)
        return cls._binary(a, b, np.asarray(y, dtype=float),
                           linear.MatmulLeftPartial(bv), linear.MatmulRightPartial(av, np.ndim(bv)), "matmul")

    @classmethod
    def _stack(cls, xs, axis, y):
        tape = _shared_tape(*xs)
        if tape is None:
            return TracedValue(y)
        parents, partials = [], []
        for pos, x in enumerate(xs):
            if isinstance(x, TracedValue) and x.node is not None:
                parents.append(x.node)
                partials.append(linear.StackPartial(pos, axis))
        return tape._push("stack", y, tuple(parents), tuple(partials))


def _shared_tape(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, TracedValue) and x.node is not None:
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError("operands belong to different tapes")
    return tape


def detach(x):
    """Stop-gradient: same value, no gradient path."""
    if isinstance(x, TracedValue):
        return TracedValue(x.value)
    if isinstance(x, Differentiable):
        return x.detach()
    return np.asarray(x, dtype=float)


def backward(tape: Tape, output, seed=None) -> Gradients:
    return tape.backward(output, seed)


def reverse_gradient(program, inputs: Iterable[float]) -> np.ndarray:
    """Gradient of a scalar ``program`` at ``inputs`` by one reverse sweep."""
    tape = Tape()
    x = tape.variable(np.asarray(list(inputs) if not isinstance(inputs, np.ndarray) else inputs, dtype=float))
    out = program(x)
    if not isinstance(out, TracedValue) or out.node is None:
        return np.zeros(x.shape)
    return tape.backward(out)[x]
