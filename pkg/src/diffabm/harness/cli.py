"""``diffabm`` command line."""

from __future__ import annotations

import sys

import click

from ..infer.estimators import ESTIMATORS, SimulatorFailure
from ..infer.train import TrainingAborted
from .config import ConfigError, load
from .runners import run as run_experiment

EXIT_CONFIG, EXIT_IO, EXIT_RUN = 2, 3, 4


def _horizon(value: str | None):
    if value is None:
        return None
    if value.lower() in ("full", "inf", "none"):
        return "full"
    try:
        h = int(value)
    except ValueError:
        raise click.BadParameter("expected a non-negative integer or 'full'") from None
    if h < 0:
        raise click.BadParameter("expected a non-negative integer or 'full'")
    return h


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Calibrate differentiable agent-based models and reproduce the experiments."""


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--seed", type=int, help="Override the config seed.")
@click.option("--out", "out", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--estimator", type=click.Choice(ESTIMATORS), help="Gradient estimator.")
@click.option("--horizon", help="Gradient horizon: integer, or 'full'.")
def run(config, seed, out, estimator, horizon):
    """Run the experiment described by CONFIG (a config file or a previous manifest).

    Flags override fields of the file; the file overrides built-in defaults.
    """
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if out is not None:
        overrides["out"] = out
    if estimator is not None:
        overrides["estimator"] = estimator
    h = _horizon(horizon)
    if h is not None:
        overrides["horizon"] = None if h == "full" else h
    try:
        cfg = load(config, overrides)
    except FileNotFoundError as exc:
        click.echo(f"error: cannot read config: {exc}", err=True)
        sys.exit(EXIT_IO)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        result = run_experiment(cfg)
    except OSError as exc:
        click.echo(f"error: I/O failure: {exc}", err=True)
        sys.exit(EXIT_IO)
    except (TrainingAborted, SimulatorFailure) as exc:
        click.echo(f"error: run aborted: {exc}", err=True)
        sys.exit(EXIT_RUN)
    click.echo(f"{cfg.kind}: wrote {len(result.files)} files to {result.out}")
    for key, value in result.summary.items():
        if not isinstance(value, (dict, list)):
            click.echo(f"  {key} = {value}")


if __name__ == "__main__":  # pragma: no cover
    main()
