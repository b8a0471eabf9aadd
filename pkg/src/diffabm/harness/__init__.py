"""Configuration, experiment runners, figures and the command-line entry point."""

from .config import ConfigError, ExperimentConfig, load, resolve
from .runners import RUNNERS, RunResult, run

__all__ = ["ConfigError", "ExperimentConfig", "RUNNERS", "RunResult", "load", "resolve", "run"]
