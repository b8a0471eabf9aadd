"""Experiment configuration: JSON file, schema validation, flag overrides.

Precedence, lowest to highest: built-in defaults, the config file, command-line
flags. Nested sections merge key by key.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import jsonschema

KINDS = ("bh-calibrate", "epi-calibrate", "grad-variance", "memory-profile")

DEFAULTS = {
    "out": "runs/out",
    "estimator": "pathwise",
    "horizon": None,
    "family": "flow",
    "render_figures": True,
    "gvi": {"w": 1e-3, "n_samples": 5, "weight_on": "kl", "kl": "auto"},
    "training": {"epochs": 2000, "lr": 1e-3, "weight_decay": 0.01},
    "bh": {"T": 100, "dataset_seed": 1, "posterior_samples": 10000},
    "epi": {"n_agents": 10000, "max_agents": 100000, "days": 50, "infectious_days": 5,
            "temperature": 0.5, "mode": "soft", "dataset_seed": 0, "population_seed": 0,
            "fan_runs": 50, "posterior_samples": 10000},
    "variance": {"repetitions": 100, "n_samples": 5, "horizons": [0, 1, 2, 100],
                 "reference_samples": 1000,
                 "mean": [0.0, 0.0, 0.0, 0.0], "log_scale": [-2.302585092994046] * 4},
    "memory": {"agents": [1000, 2000, 4000], "steps": [10, 20, 40]},
}

# Per-kind defaults layered over DEFAULTS.
KIND_DEFAULTS = {
    "bh-calibrate": {"horizon": 0},
    "epi-calibrate": {"estimator": "hybrid", "training": {"epochs": 600}},
    "grad-variance": {"family": "gaussian"},
    "memory-profile": {},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def load_schema(name: str = "experiment") -> dict:
    text = resources.files("diffabm").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(raw: dict, schema_name: str = "experiment") -> None:
    validator = jsonschema.Draft202012Validator(load_schema(schema_name))
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        field = ".".join(str(p) for p in err.absolute_path)
        if not field and err.validator == "required":
            field = err.message.split("'")[1]
        if not field and err.validator == "additionalProperties":
            field = err.message.split("'")[1] if "'" in err.message else "<root>"
        raise ConfigError(f"invalid field '{field or '<root>'}': {err.message}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment configuration."""

    data: dict

    @property
    def kind(self) -> str:
        return self.data["kind"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def __getitem__(self, key):
        return self.data[key]

    def canonical_json(self) -> bytes:
        """Sorted compact JSON of everything except the output location."""
        body = {k: v for k, v in self.data.items() if k != "out"}
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()

    def content_hash(self) -> str:
        """Git blob hash of :meth:`canonical_json`; equal for runs that differ only in ``out``."""
        body = self.canonical_json()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def resolve(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate ``raw``, apply ``overrides`` (only keys that were given) and fill defaults."""
    merged = _merge(raw, overrides or {})
    validate(merged)
    kind = merged["kind"]
    full = _merge(_merge(DEFAULTS, KIND_DEFAULTS[kind]), merged)
    validate(full)
    epi = full["epi"]
    if epi["n_agents"] > epi["max_agents"]:
        raise ConfigError(f"invalid field 'epi.n_agents': {epi['n_agents']} exceeds max_agents "
                          f"{epi['max_agents']}")
    return ExperimentConfig(full)


def load(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file (or a manifest written by a previous run)."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid field '<root>': not valid JSON ({exc})") from exc
    if isinstance(raw, dict) and "config" in raw and "content_hash" in raw:
        raw = raw["config"]
    if not isinstance(raw, dict):
        raise ConfigError("invalid field '<root>': config must be a JSON object")
    return resolve(raw, overrides)
