"""Automatic differentiation substrate: tape (reverse) and dual (forward) modes."""

from . import ops
from .dual import DualBatch, forward_jacobian, value_and_jacobian
from .gumbel import gumbel_softmax, logistic_noise, relaxed_bernoulli, sample_gumbel_softmax
from .ops import stable_softmax
from .rng import RngStream
from .tape import (Gradients, Tape, TapeError, TapeNode, TapeRecorder, TracedValue, backward, detach,
                   reverse_gradient)

__all__ = [
    "DualBatch", "Gradients", "RngStream", "Tape", "TapeError", "TapeNode", "TapeRecorder", "TracedValue",
    "backward", "detach", "forward_jacobian", "gumbel_softmax", "logistic_noise", "ops",
    "relaxed_bernoulli", "reverse_gradient", "sample_gumbel_softmax", "stable_softmax",
    "value_and_jacobian",
]
