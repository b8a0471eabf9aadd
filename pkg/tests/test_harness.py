import json
import os
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from diffabm.harness import analysis
from diffabm.harness.artifacts import file_hash, read_csv, write_csv
from diffabm.harness.cli import EXIT_CONFIG, EXIT_IO, main
from diffabm.harness.config import ConfigError, load_schema, resolve

TINY = {
    "bh-calibrate": {"kind": "bh-calibrate", "seed": 3, "training": {"epochs": 4},
                     "bh": {"T": 30, "posterior_samples": 50}, "render_figures": False},
    "grad-variance": {"kind": "grad-variance", "seed": 1, "render_figures": False,
                      "variance": {"repetitions": 3, "reference_samples": 10}, "bh": {"T": 20}},
    "epi-calibrate": {"kind": "epi-calibrate", "seed": 2, "training": {"epochs": 2}, "render_figures": False,
                      "epi": {"n_agents": 300, "days": 6, "fan_runs": 3, "posterior_samples": 20}},
    "memory-profile": {"kind": "memory-profile", "seed": 0, "render_figures": False,
                       "memory": {"agents": [50, 100], "steps": [2, 4]}},
}


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def csv_hashes(out: Path) -> dict:
    return {p.name: file_hash(p) for p in sorted(out.glob("*.csv"))}


# --- configuration ------------------------------------------------------------------

def test_unknown_kind_names_field():
    with pytest.raises(ConfigError, match="'kind'"):
        resolve({"kind": "lotka-volterra", "seed": 0})


def test_missing_seed_names_field():
    with pytest.raises(ConfigError, match="'seed'"):
        resolve({"kind": "bh-calibrate"})


@pytest.mark.parametrize("raw, field", [
    ({"kind": "bh-calibrate", "seed": 0, "training": {"epochs": -1}}, "training.epochs"),
    ({"kind": "bh-calibrate", "seed": 0, "gvi": {"n_samples": 0}}, "gvi.n_samples"),
    ({"kind": "bh-calibrate", "seed": 0, "estimator": "finite"}, "estimator"),
    ({"kind": "bh-calibrate", "seed": 0, "colour": "red"}, "colour"),
    ({"kind": "epi-calibrate", "seed": 0, "epi": {"n_agents": 200000}}, "epi.n_agents"),
])
def test_invalid_fields(raw, field):
    with pytest.raises(ConfigError, match=f"'{field}'"):
        resolve(raw)


def test_precedence():
    cfg = resolve({"kind": "epi-calibrate", "seed": 1, "training": {"lr": 0.01}}, {"seed": 9, "horizon": 2})
    assert cfg.seed == 9 and cfg["horizon"] == 2
    assert cfg["training"]["lr"] == 0.01
    assert cfg["training"]["epochs"] == 600          # per-kind default
    assert cfg["estimator"] == "hybrid"
    assert cfg["gvi"]["w"] == 1e-3                    # global default


def test_hash_ignores_output_dir():
    a = resolve({"kind": "bh-calibrate", "seed": 1, "out": "x"})
    b = resolve({"kind": "bh-calibrate", "seed": 1, "out": "y"})
    c = resolve({"kind": "bh-calibrate", "seed": 2, "out": "x"})
    assert a.content_hash() == b.content_hash() != c.content_hash()


def test_schemas_ship_and_parse():
    for name in ("experiment", "variational", "epi_params", "population"):
        assert load_schema(name)["$schema"].startswith("https://json-schema.org/")


# --- command line ---------------------------------------------------------------------

def test_cli_unknown_kind_exit_code(tmp_path):
    res = CliRunner().invoke(main, ["run", str(write(tmp_path, {"kind": "nope", "seed": 0}))])
    assert res.exit_code == EXIT_CONFIG
    assert "kind" in res.output


def test_cli_missing_file(tmp_path):
    res = CliRunner().invoke(main, ["run", str(tmp_path / "absent.json")])
    assert res.exit_code == EXIT_IO


def test_cli_bad_json(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text("{not json")
    assert CliRunner().invoke(main, ["run", str(p)]).exit_code == EXIT_CONFIG


def test_cli_bad_horizon(tmp_path):
    res = CliRunner().invoke(main, ["run", str(write(tmp_path, TINY["bh-calibrate"])), "--horizon", "-2"])
    assert res.exit_code != 0


def test_cli_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    res = CliRunner().invoke(main, ["run", str(write(tmp_path, TINY["memory-profile"])),
                                    "--out", str(blocker / "sub")])
    assert res.exit_code == EXIT_IO


@pytest.mark.skipif(hasattr(os, "geteuid") and os.geteuid() == 0, reason="root ignores directory permissions")
def test_cli_read_only_output(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    try:
        res = CliRunner().invoke(main, ["run", str(write(tmp_path, TINY["memory-profile"])), "--out", str(ro)])
        assert res.exit_code == EXIT_IO
    finally:
        ro.chmod(0o700)


def test_cli_flags_override(tmp_path):
    out = tmp_path / "o"
    res = CliRunner().invoke(main, ["run", str(write(tmp_path, TINY["bh-calibrate"])), "--out", str(out),
                                    "--seed", "11", "--estimator", "score", "--horizon", "full"])
    assert res.exit_code == 0, res.output
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 11
    assert manifest["config"]["estimator"] == "score" and manifest["config"]["horizon"] is None


# --- runners and determinism ------------------------------------------------------------

@pytest.mark.parametrize("kind", sorted(TINY))
def test_rerun_from_manifest_is_byte_identical(tmp_path, kind):
    runner = CliRunner()
    first = tmp_path / "first"
    res = runner.invoke(main, ["run", str(write(tmp_path, TINY[kind])), "--out", str(first)])
    assert res.exit_code == 0, res.output
    second = tmp_path / "second"
    res = runner.invoke(main, ["run", str(first / "manifest.json"), "--out", str(second)])
    assert res.exit_code == 0, res.output
    a, b = csv_hashes(first), csv_hashes(second)
    assert a and a == b
    ma = json.loads((first / "manifest.json").read_text())
    mb = json.loads((second / "manifest.json").read_text())
    assert ma["content_hash"] == mb["content_hash"]
    assert ma["outputs"] == mb["outputs"]


def test_figures_rendered_next_to_csv(tmp_path):
    cfg = dict(TINY["memory-profile"], render_figures=True)
    out = tmp_path / "o"
    assert CliRunner().invoke(main, ["run", str(write(tmp_path, cfg)), "--out", str(out)]).exit_code == 0
    assert (out / "profile.png").stat().st_size > 0
    assert (out / "profile.csv").exists()


def test_memory_profile_forward_zero(tmp_path):
    out = tmp_path / "o"
    CliRunner().invoke(main, ["run", str(write(tmp_path, TINY["memory-profile"])), "--out", str(out)])
    rows = read_csv(out / "profile.csv")
    assert len(rows) == 8
    assert all(int(r["node_count"]) == 0 for r in rows if r["mode"] == "forward")
    assert all(int(r["node_count"]) > 0 for r in rows if r["mode"] == "reverse")


# --- analysis helpers ----------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    p = write_csv(tmp_path / "x.csv", ["a", "b"], [[0.1, None], [True, 3]])
    assert p.read_text() == "a,b\n0.1,\ntrue,3\n"
    assert read_csv(p) == [{"a": "0.1", "b": ""}, {"a": "true", "b": "3"}]
    with pytest.raises(ValueError):
        write_csv(tmp_path / "y.csv", ["a"], [[1, 2]])


def test_plateau_epoch():
    flat = np.r_[np.linspace(10, 1, 200), np.ones(200)]
    e = analysis.plateau_epoch(flat)
    assert e is not None and 200 <= e < 300
    assert analysis.plateau_epoch(np.linspace(10, 1, 400)) is None
    assert analysis.plateau_epoch(np.ones(50)) is None


def test_coverage_and_affine_fit():
    traj = np.tile(np.arange(10.0), (20, 1)) + np.linspace(-1, 1, 20)[:, None]
    assert analysis.coverage(np.arange(10.0), traj) == 1.0
    assert analysis.coverage(np.arange(10.0) + 5, traj) == 0.0
    a, b, r2 = analysis.affine_fit([1, 2, 3, 4], [3, 5, 7, 9])
    assert (a, b) == pytest.approx((1.0, 2.0)) and r2 == pytest.approx(1.0)


def test_variance_ordering():
    rng = np.random.default_rng(0)
    samples = {k: rng.normal(size=(100, 8)) * s for k, s in (("a", 1.0), ("b", 2.0), ("c", 4.0))}
    res = analysis.variance_ordering(samples, ["a", "b", "c"])
    assert res.inversions == 0 and res.passed
    res = analysis.variance_ordering(samples, ["c", "b", "a"])
    assert res.inversions == 2 and not res.passed
