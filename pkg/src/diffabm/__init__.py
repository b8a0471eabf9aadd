"""Differentiable agent-based model calibration toolkit."""

__version__ = "0.1.0"
