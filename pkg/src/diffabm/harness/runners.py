"""Experiment runners. Each writes CSV/JSON artifacts plus a manifest into the
output directory and returns a :class:`RunResult`.

Wall-clock timings go to ``timing.json`` only, so every CSV is a deterministic
function of the manifest.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..abm.brock_hommes import PARAM_NAMES, TRUE_THETA, BHAux
from ..abm.epidemic import EpiConfig, EpiParams, epi_simulate
from ..abm.population import LOCATION_TYPES, synth_population
from ..ad import ops
from ..ad.dual import value_and_jacobian
from ..ad.rng import RngStream
from ..ad.tape import Tape, TapeRecorder
from ..calibration import (BHLoss, EpiLoss, bh_ground_truth, epi_ground_truth, epi_inverse_transform,
                           epi_transform)
from ..infer.estimators import estimate
from ..infer.families import DiagonalGaussian, GaussianPrior, MaskedAffineAutoregressiveFlow
from ..infer.train import LOG_COLUMNS, train
from ..objective import GviConfig
from . import analysis
from .artifacts import file_hash, write_csv, write_json
from .config import ExperimentConfig


@dataclass
class RunResult:
    out: Path
    files: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def path(self, name: str) -> Path:
        return self.files[name]


def _family(kind: str, dim: int, seed: int):
    if kind == "flow":
        return MaskedAffineAutoregressiveFlow(dim, seed=seed)
    return DiagonalGaussian(np.zeros(dim), np.zeros(dim))


def _gvi(cfg: ExperimentConfig) -> GviConfig:
    g = cfg["gvi"]
    return GviConfig(w=g["w"], n_samples=g["n_samples"], weight_on=g["weight_on"])


def _train(cfg: ExperimentConfig, q, prior, loss):
    t = cfg["training"]
    return train(q, prior, loss, cfg["estimator"], _gvi(cfg), epochs=t["epochs"], seed=cfg.seed,
                 horizon=cfg["horizon"], lr=t["lr"], weight_decay=t["weight_decay"], kl=cfg["gvi"]["kl"])


def _loss_rows(log):
    return [list(r) for r in log.rows]


def _horizon_label(h) -> str:
    return "H=full" if h is None else f"H={h}"


# --------------------------------------------------------------------------- BH
def run_bh_calibration(cfg: ExperimentConfig, out: Path) -> RunResult:
    res = RunResult(out)
    b = cfg["bh"]
    aux = BHAux(T=b["T"])
    y = bh_ground_truth(aux, seed=b["dataset_seed"])
    loss = BHLoss(y, aux)
    prior = GaussianPrior.standard(4)
    q0 = _family(cfg["family"], 4, cfg.seed)

    start = time.perf_counter()
    trained = _train(cfg, q0, prior, loss)
    res.timing["train_seconds"] = time.perf_counter() - start

    u = RngStream(cfg.seed).spawn("posterior").normal((b["posterior_samples"], 4))
    samples = trained.q.sample_values(u)

    res.files["observed"] = write_csv(out / "observed.csv", ["t", "price"],
                                      [[t + 1, p] for t, p in enumerate(y)])
    res.files["loss_curve"] = write_csv(out / "loss_curve.csv", LOG_COLUMNS, _loss_rows(trained.log))
    res.files["posterior_samples"] = write_csv(out / "posterior_samples.csv", list(PARAM_NAMES),
                                               samples.tolist())
    res.files["variational_params"] = write_json(out / "variational_params.json", trained.q.to_dict())
    losses = trained.log.column("loss_term")
    res.summary = {
        "final_loss": analysis.final_loss(losses) if len(losses) else None,
        "posterior_median": np.median(samples, axis=0).tolist(),
        "posterior_std": samples.std(axis=0).tolist(),
        "kernel_bandwidth": loss.kernel.bandwidth,
    }
    if cfg["render_figures"]:
        from . import plotting

        res.files["loss_curve_png"] = plotting.loss_curve(trained.log, out / "loss_curve.png",
                                                          title=f"{cfg['estimator']} {_horizon_label(cfg['horizon'])}")
        res.files["posterior_png"] = plotting.corner(samples, list(PARAM_NAMES), out / "posterior.png",
                                                       truth=TRUE_THETA)
    return res


# -------------------------------------------------------------- gradient variance
def variance_labels(horizons) -> list[str]:
    return [_horizon_label(h) for h in horizons] + ["score"]


def run_gradient_variance(cfg: ExperimentConfig, out: Path) -> RunResult:
    res = RunResult(out)
    v = cfg["variance"]
    aux = BHAux(T=cfg["bh"]["T"])
    loss = BHLoss(bh_ground_truth(aux, seed=cfg["bh"]["dataset_seed"]), aux)
    q = DiagonalGaussian(v["mean"], v["log_scale"])
    components = [f"mean_{p}" for p in PARAM_NAMES] + [f"log_scale_{p}" for p in PARAM_NAMES]
    settings = [("pathwise", h) for h in v["horizons"]] + [("score", None)]
    labels = variance_labels(v["horizons"])
    root = RngStream(cfg.seed)

    start = time.perf_counter()
    est = {label: np.zeros((v["repetitions"], len(components))) for label in labels}
    for r in range(v["repetitions"]):
        rng = root.spawn("repetition", r)  # shared across estimators: common random numbers
        for label, (kind, h) in zip(labels, settings):
            est[label][r] = estimate(kind, q, loss, v["n_samples"], rng, horizon=h).mean
    ref = {
        "score": estimate("score", q, loss, v["reference_samples"], root.spawn("reference", "score")),
        "pathwise H=full": estimate("pathwise", q, loss, v["reference_samples"],
                                    root.spawn("reference", "pathwise"), horizon=None),
    }
    res.timing["seconds"] = time.perf_counter() - start

    rows = [[label, r, c, est[label][r, j]]
            for label in labels for r in range(v["repetitions"]) for j, c in enumerate(components)]
    res.files["gradient_samples"] = write_csv(out / "gradient_samples.csv",
                                              ["estimator", "repetition", "component", "value"], rows)
    rows = [[label, c, est[label][:, j].mean(), est[label][:, j].std(ddof=1), v["repetitions"]]
            for label in labels for j, c in enumerate(components)]
    res.files["gradient_std"] = write_csv(out / "gradient_std.csv",
                                          ["estimator", "component", "mean", "std", "n"], rows)
    rows = [[name, c, g.mean[j], g.std[j], g.stderr[j], g.n]
            for name, g in ref.items() for j, c in enumerate(components)]
    res.files["reference"] = write_csv(out / "reference.csv",
                                       ["estimator", "component", "mean", "std", "stderr", "n"], rows)

    order = [_horizon_label(h) for h in v["horizons"] if h in (0, 1, 100)] + ["score"]
    ordering = analysis.variance_ordering(est, order, seed=cfg.seed)
    agree = analysis.within_stderr(ref["score"].mean, ref["score"].stderr,
                                   ref["pathwise H=full"].mean, ref["pathwise H=full"].stderr)
    res.summary = {
        "median_std": {label: analysis.median_std(est[label]) for label in labels},
        "ordering": {"labels": list(ordering.labels), "medians": list(ordering.medians),
                     "p_values": list(ordering.p_values), "inversions": ordering.inversions,
                     "passed": ordering.passed},
        "reference_agreement": agree.tolist(),
    }
    if cfg["render_figures"]:
        from . import plotting

        res.files["boxplots_png"] = plotting.gradient_boxplots(est, components, ref, out / "gradient_boxplots.png")
        res.files["std_hist_png"] = plotting.std_histograms(est, out / "gradient_std_hist.png")
    return res


# ------------------------------------------------------------------- epidemic
def _epi_config(cfg: ExperimentConfig) -> EpiConfig:
    e = cfg["epi"]
    return EpiConfig(days=e["days"], infectious_days=e["infectious_days"], temperature=e["temperature"],
                     mode=e["mode"])


def run_epi_calibration(cfg: ExperimentConfig, out: Path) -> RunResult:
    res = RunResult(out)
    e = cfg["epi"]
    pop = synth_population(e["n_agents"], rng=RngStream(e["population_seed"]).spawn("population"))
    ecfg = _epi_config(cfg)
    truth = epi_ground_truth(pop, ecfg, seed=e["dataset_seed"])
    loss = EpiLoss(np.asarray(ops.value(truth.daily)), pop, ecfg)
    dim = len(LOCATION_TYPES) + 1
    prior = GaussianPrior.standard(dim)
    q0 = _family(cfg["family"], dim, cfg.seed)

    start = time.perf_counter()
    trained = _train(cfg, q0, prior, loss)
    res.timing["train_seconds"] = time.perf_counter() - start

    root = RngStream(cfg.seed)
    u = root.spawn("fan", "base").normal((e["fan_runs"], dim))
    sources = {"prior": u, "untrained": q0.sample_values(u), "trained": trained.q.sample_values(u)}
    fans = {}
    for name, zs in sources.items():
        fans[name] = np.array([loss.simulate(z, root.spawn("fan", i)).cumulative for i, z in enumerate(zs)])
    res.timing["total_seconds"] = time.perf_counter() - start

    cum = truth.cumulative
    daily = np.r_[float(ops.value(truth.seeded)), ops.value(truth.daily)]
    res.files["ground_truth"] = write_csv(out / "ground_truth.csv", ["day", "new_infections", "cumulative"],
                                          [[d, daily[d], cum[d]] for d in range(len(cum))])
    res.files["loss_curve"] = write_csv(out / "loss_curve.csv", LOG_COLUMNS, _loss_rows(trained.log))
    rows = [[name, i, d, fan[i, d]] for name, fan in fans.items()
            for i in range(fan.shape[0]) for d in range(fan.shape[1])]
    res.files["trajectories"] = write_csv(out / "trajectories.csv", ["source", "run", "day", "cumulative"], rows)

    z = trained.q.sample_values(root.spawn("posterior").normal((e["posterior_samples"], dim)))
    betas, i0 = epi_transform(z.T)
    header = [f"beta_{k}" for k in LOCATION_TYPES] + ["i0_fraction"]
    res.files["posterior_samples"] = write_csv(out / "posterior_samples.csv", header,
                                               np.column_stack([betas.T, i0]).tolist())
    res.files["variational_params"] = write_json(out / "variational_params.json", trained.q.to_dict())
    res.files["population"] = out / "population.json"
    pop.save(res.files["population"])

    losses = trained.log.column("loss_term")
    truth_z = epi_inverse_transform(EpiParams.ground_truth().betas, EpiParams.ground_truth().i0_fraction)
    res.summary = {
        "final_loss": analysis.final_loss(losses) if len(losses) else None,
        "plateau_epoch": analysis.plateau_epoch(losses),
        "coverage": analysis.coverage(cum, fans["trained"]),
        "final_width": {k: analysis.envelope_width(f) for k, f in fans.items()},
        "truth_unconstrained": truth_z.tolist(),
    }
    if cfg["render_figures"]:
        from . import plotting

        res.files["loss_curve_png"] = plotting.loss_curve(trained.log, out / "loss_curve.png", title="hybrid",
                                                          log_scale=True)
        res.files["fan_png"] = plotting.trajectory_fan(cum, fans, out / "trajectories.png")
        res.files["posterior_png"] = plotting.marginals(np.column_stack([betas.T, i0]), header,
                                                        out / "posterior.png")
    return res


# --------------------------------------------------------------------- memory
PROFILE_COLUMNS = ("n_agents", "steps", "agent_steps", "mode", "node_count", "peak_live_nodes", "status")


@dataclass
class ProfileRecord:
    """One gradient evaluation of the epidemic model.

    ``node_count`` is the scalar-equivalent size of every tape created during
    the evaluation. ``peak_live_nodes`` is the largest graph held at once: the
    whole tape in reverse mode (nothing is freed before the backward sweep),
    zero in forward mode.
    """

    n_agents: int
    steps: int
    mode: str
    node_count: int
    peak_live_nodes: int
    wall_time: float
    status: str = "ok"

    def row(self):
        return [self.n_agents, self.steps, self.n_agents * self.steps, self.mode, self.node_count,
                self.peak_live_nodes, self.status]


def profile_point(pop, steps: int, mode: str, seed: int = 0) -> ProfileRecord:
    """Record tape usage of one gradient of total infections w.r.t. all 11 parameters."""
    params = EpiParams.ground_truth()
    theta = epi_inverse_transform(params.betas, params.i0_fraction)
    ecfg = EpiConfig(days=steps)
    rng = RngStream(seed).spawn("profile")

    def program(z):
        betas, i0 = epi_transform(z)
        return epi_simulate(betas, i0, pop, rng, ecfg).daily.sum()

    start = time.perf_counter()
    try:
        with TapeRecorder() as rec:
            if mode == "reverse":
                tape = Tape()
                x = tape.variable(theta)
                tape.backward(program(x))
                peak = rec.node_count
            elif mode == "forward":
                value_and_jacobian(program, theta)
                peak = 0
            else:
                raise ValueError(f"unknown AD mode {mode!r}")
        status, count = "ok", rec.node_count
    except MemoryError:
        status, count, peak = "out-of-memory", -1, -1
    return ProfileRecord(pop.n_agents, steps, mode, count, peak, time.perf_counter() - start, status)


def run_memory_profile(cfg: ExperimentConfig, out: Path) -> RunResult:
    res = RunResult(out)
    m = cfg["memory"]
    records = []
    for n in m["agents"]:
        pop = synth_population(n, rng=RngStream(cfg.seed).spawn("population", n))
        for steps in m["steps"]:
            for mode in ("forward", "reverse"):
                records.append(profile_point(pop, steps, mode, cfg.seed))
    res.files["profile"] = write_csv(out / "profile.csv", PROFILE_COLUMNS, [r.row() for r in records])
    res.timing["rows"] = [{"n_agents": r.n_agents, "steps": r.steps, "mode": r.mode, "wall_time": r.wall_time}
                          for r in records]
    rev = [r for r in records if r.mode == "reverse" and r.status == "ok"]
    fwd = [r for r in records if r.mode == "forward" and r.status == "ok"]
    fit = analysis.affine_fit([r.n_agents * r.steps for r in rev], [r.node_count for r in rev]) \
        if len(rev) >= 2 else (None, None, None)
    res.summary = {
        "reverse_fit": {"intercept": fit[0], "slope": fit[1], "r2": fit[2]},
        "forward_node_counts": [r.node_count for r in fwd],
        "failed_rows": sum(r.status != "ok" for r in records),
    }
    if cfg["render_figures"]:
        from . import plotting

        res.files["profile_png"] = plotting.memory_profile(records, fit, out / "profile.png")
    return res


RUNNERS = {
    "bh-calibrate": run_bh_calibration,
    "grad-variance": run_gradient_variance,
    "epi-calibrate": run_epi_calibration,
    "memory-profile": run_memory_profile,
}


def run(cfg: ExperimentConfig, out=None) -> RunResult:
    """Dispatch ``cfg`` to its runner and write ``manifest.json``, ``summary.json``
    and ``timing.json`` next to the outputs.
    """
    out = Path(out if out is not None else cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    res = RUNNERS[cfg.kind](cfg, out)
    res.files["summary"] = write_json(out / "summary.json", res.summary)
    res.files["timing"] = write_json(out / "timing.json", res.timing)
    hashed = {name: file_hash(p) for name, p in sorted(res.files.items())
              if Path(p).suffix in (".csv", ".json") and name != "timing"}
    manifest = {
        "config": cfg.data,
        "content_hash": cfg.content_hash(),
        "seed": cfg.seed,
        "package_version": __version__,
        "outputs": {name: {"file": Path(res.files[name]).name, "hash": h} for name, h in hashed.items()},
    }
    res.files["manifest"] = write_json(out / "manifest.json", manifest)
    return res
