"""Experiment pipelines behind the CLI subcommands.

Each run writes into its own directory:

* ``samples.csv``: parameter columns, plus ``weight`` for nested sampling
* ``metrics.json``: ESS, evaluation counts, wall time and per-ESS ratios
* ``evidence.json``: ``log_z`` and its error (nested sampling only)
* ``flow.bnaf``: trained flow (NeuTra methods only)
* ``manifest.json``: resolved config, versions, timestamps and any error
"""

from __future__ import annotations

import logging
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import jax
import numpy as np

import neutrabench
from neutrabench.diagnostics import (
    RunMetrics,
    WeightedSampleSet,
    assemble_metrics,
    equal_tailed_interval,
    kish_ess,
    min_ess,
    weighted_quantile,
)
from neutrabench.flows import BnafFlow, FlowConfig, load_flow, save_flow
from neutrabench.ground_truth import (
    QuadratureGrid,
    log_evidence_oracle,
    marginal_contour,
    super_level_mass,
)
from neutrabench.harness.config import ConfigError, ExperimentConfig, default_output_root
from neutrabench.harness.io import read_json, read_samples, write_json, write_samples, write_table
from neutrabench.models import (
    GaussianFitModel,
    NsiModel,
    SurrogateRate,
    load_reference_dataset,
    make_dataset,
)
from neutrabench.models.gaussian_fit import load_dataset
from neutrabench.nested import NestedSamplerError, run_ns
from neutrabench.neutra import OptimizerConfig, TrainingError, TrainingTrace, compose_for_sampling, train_neutra
from neutrabench.nuts import AdaptationError, NutsConfig, run_nuts

log = logging.getLogger(__name__)

SAMPLER_ERRORS = (NestedSamplerError, AdaptationError, TrainingError, FloatingPointError)
BENCH_METHODS = ("ns", "neutra-ns", "nuts", "neutra-nuts")


class RunFailed(RuntimeError):
    def __init__(self, message: str, artifact: "RunArtifact"):
        super().__init__(message)
        self.artifact = artifact


@dataclass
class RunArtifact:
    directory: Path
    config: ExperimentConfig
    metrics: Optional[RunMetrics] = None
    evidence: Optional[dict] = None
    training: Optional[dict] = None
    error: Optional[dict] = None
    files: dict = field(default_factory=dict)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def build_model(cfg: ExperimentConfig):
    """``(model object, posterior bundle)`` for the configured model."""
    if cfg.model == "gaussian_fit":
        if cfg.dataset_path:
            data = load_dataset(cfg.dataset_path)
        elif cfg.dataset_seed is not None:
            data = make_dataset(cfg.dataset_seed)
        else:
            data = load_reference_dataset()
        model = GaussianFitModel(data)
    else:
        surrogate = dict(cfg.surrogate)
        if "flavour_weights" in surrogate:
            surrogate["flavour_weights"] = tuple(surrogate["flavour_weights"])
        model = NsiModel(plugin=SurrogateRate(**surrogate))
    return model, model.posterior()


def _flow_config(cfg: ExperimentConfig) -> FlowConfig:
    return FlowConfig(cfg.flow_stacks, tuple(cfg.flow_hidden))


def train_flow(cfg: ExperimentConfig, posterior) -> tuple[BnafFlow, TrainingTrace]:
    return train_neutra(
        posterior,
        _flow_config(cfg),
        epochs=cfg.epochs,
        batch=cfg.batch,
        optimizer=OptimizerConfig(cfg.learning_rate, cfg.final_learning_rate),
        seed=cfg.seed,
    )


def _manifest(cfg: ExperimentConfig, started: str, art: RunArtifact) -> dict:
    return {
        "config": cfg.to_dict(),
        "version": neutrabench.__version__,
        "python": platform.python_version(),
        "jax": jax.__version__,
        "numpy": np.__version__,
        "started": started,
        "finished": _now(),
        "files": art.files,
        "error": art.error,
    }


def run_experiment(config: ExperimentConfig, out_dir=None, flow: Optional[BnafFlow] = None) -> RunArtifact:
    """Run one sampler pipeline and write its artifacts.

    Raises :class:`RunFailed` (after writing the manifest) when a sampler or
    the flow training fails.
    """
    cfg = config.resolved()
    if cfg.method == "ground-truth":
        raise ConfigError("use the ground-truth subcommand for the quadrature oracle")
    out = Path(out_dir or cfg.output_dir or default_output_root() / f"{cfg.model}-{cfg.method}-seed{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    art = RunArtifact(out, cfg)
    model, posterior = build_model(cfg)
    try:
        target = posterior
        if cfg.uses_flow:
            if flow is None and cfg.flow_path:
                flow = load_flow(cfg.flow_path)
            if flow is None:
                flow, trace = train_flow(cfg, posterior)
                art.training = {
                    "final_mean_elbo": trace.final_mean_elbo,
                    "epochs": len(trace.elbo_per_epoch),
                    "skipped_epochs": trace.n_skipped,
                    "wall_time_s": trace.wall_time,
                }
            if flow.dimension != posterior.dimension:
                raise ConfigError("flow dimension does not match the model")
            save_flow(flow, out / "flow.bnaf")
            art.files["flow"] = "flow.bnaf"
            target = compose_for_sampling(flow, posterior)

        if cfg.method.endswith("ns"):
            res = run_ns(
                target, cfg.n_live, cfg.frac_remain, cfg.seed, stochastic_shrinkage=cfg.stochastic_shrinkage
            )
            ess = kish_ess(res.weights)
            write_samples(out / "samples.csv", posterior.parameter_names, res.samples, res.weights)
            art.evidence = {
                "log_z": res.log_z,
                "log_z_err": res.log_z_err,
                "information": res.information,
                "n_iterations": res.n_iterations,
            }
            write_json(out / "evidence.json", art.evidence)
            art.files["evidence"] = "evidence.json"
        else:
            nuts_cfg = NutsConfig(
                target_accept=cfg.target_accept or 0.8, step_size=cfg.step_size, max_depth=cfg.max_depth
            )
            res = run_nuts(target, cfg.chains, cfg.warmup, cfg.samples, nuts_cfg, cfg.seed)
            ess = min_ess(res.chains) if cfg.samples >= 4 else float("nan")
            flat = res.chains.reshape(-1, posterior.dimension)
            write_samples(out / "samples.csv", posterior.parameter_names, flat)
        art.files["samples"] = "samples.csv"
        if np.isfinite(ess) and ess > 0:
            art.metrics = assemble_metrics(res, res.wall_time, ess, cfg.method)
            extra = art.metrics.to_dict()
        else:
            extra = {"method": cfg.method, "ess": None}
        extra["model"] = cfg.model
        extra["seconds_per_eval"] = res.wall_time / max(
            getattr(res, "n_likelihood_evals", 0) or getattr(res, "n_gradient_evals", 0), 1
        )
        if hasattr(res, "failed_chains"):
            extra["failed_chains"] = [list(fc) for fc in res.failed_chains]
            extra["accept_stat"] = res.accept_stat
            extra["step_size"] = res.step_size
        if art.training:
            extra["training"] = art.training
        write_json(out / "metrics.json", extra)
        art.files["metrics"] = "metrics.json"
    except SAMPLER_ERRORS as exc:
        art.error = {"type": type(exc).__name__, "message": str(exc)}
        write_json(out / "manifest.json", _manifest(cfg, started, art))
        raise RunFailed(str(exc), art) from exc
    write_json(out / "manifest.json", _manifest(cfg, started, art))
    art.files["manifest"] = "manifest.json"
    return art


# --------------------------------------------------------------------------
# bench


def _mean_std(values: Sequence[float]):
    vals = [v for v in values if v is not None and np.isfinite(v)]
    if not vals:
        return None, None
    return float(np.mean(vals)), (float(np.std(vals, ddof=1)) if len(vals) > 1 else None)


def run_bench(config: ExperimentConfig, out_dir=None) -> Path:
    """Repeat each method and write ``bench_runs.csv`` and ``bench_table.csv``.

    NeuTra methods share one flow, trained once (or loaded from
    ``flow_path``). Failed repetitions are counted, not fatal.
    """
    base = config.resolved()
    methods = list(base.methods or BENCH_METHODS)
    out = Path(out_dir or base.output_dir or default_output_root() / f"{base.model}-bench-seed{base.seed}")
    out.mkdir(parents=True, exist_ok=True)
    _, posterior = build_model(base)

    flow = None
    if any(m.startswith("neutra") for m in methods):
        if base.flow_path:
            flow = load_flow(base.flow_path)
        else:
            flow_cfg = ExperimentConfig(**{**base.to_dict(), "method": "neutra-ns"}).resolved()
            flow, trace = train_flow(flow_cfg, posterior)
            write_json(out / "training.json", {"final_mean_elbo": trace.final_mean_elbo, "wall_time_s": trace.wall_time})
        save_flow(flow, out / "flow.bnaf")

    run_rows, table_rows = [], []
    for method in methods:
        per = []
        n_failed = 0
        for rep in range(base.repetitions):
            d = {**config.to_dict(), "method": method, "seed": base.seed + rep, "output_dir": None}
            d["n_live"] = config.n_live
            cfg = ExperimentConfig(**d)
            try:
                art = run_experiment(cfg, out / method / f"rep-{rep}", flow=flow if method.startswith("neutra") else None)
            except RunFailed as exc:
                log.error("%s rep %d failed: %s", method, rep, exc)
                n_failed += 1
                run_rows.append([method, str(rep), "failed", None, None, None, None, None])
                continue
            m = art.metrics
            log_z = art.evidence["log_z"] if art.evidence else None
            log_z_err = art.evidence["log_z_err"] if art.evidence else None
            per.append((m, log_z))
            run_rows.append([
                method, str(rep), "ok", m.wall_time_per_ess, m.evals_per_ess,
                m.divergences_per_ess, log_z, log_z_err,
            ])
        stats = [
            _mean_std([m.wall_time_per_ess for m, _ in per]),
            _mean_std([m.evals_per_ess for m, _ in per]),
            _mean_std([m.divergences_per_ess for m, _ in per]),
            _mean_std([lz for _, lz in per]),
        ]
        table_rows.append([method, str(len(per)), str(n_failed)] + [x for pair in stats for x in pair])
    write_table(
        out / "bench_runs.csv",
        ["method", "rep", "status", "wall_time_per_ess", "evals_per_ess", "divergences_per_ess", "log_z", "log_z_err"],
        run_rows,
    )
    write_table(
        out / "bench_table.csv",
        [
            "method", "n_ok", "n_failed",
            "wall_time_per_ess_mean", "wall_time_per_ess_std",
            "evals_per_ess_mean", "evals_per_ess_std",
            "divergences_per_ess_mean", "divergences_per_ess_std",
            "log_z_mean", "log_z_std",
        ],
        table_rows,
    )
    return out


# --------------------------------------------------------------------------
# ground truth


def run_ground_truth(
    config: ExperimentConfig,
    out_dir=None,
    points_per_dim: int = 151,
    contour_points: int = 201,
    mu_range=(-6.0, 8.0),
    c_range=(-10.0, 10.0),
) -> dict:
    """Evidence convergence trace and the (mu_1, C_1) contour field as CSV."""
    cfg = config.resolved()
    if cfg.model != "gaussian_fit":
        raise ConfigError("the quadrature oracle exists only for the Gaussian-fit model")
    out = Path(out_dir or cfg.output_dir or default_output_root() / "gaussian_fit-ground-truth")
    out.mkdir(parents=True, exist_ok=True)
    model, _ = build_model(cfg)
    grid = QuadratureGrid(-50.0, 50.0, points_per_dim)
    oracle = log_evidence_oracle(model, grid)
    write_table(out / "evidence_trace.csv", ["points_per_dim", "log_z"], oracle.trace)

    u_grid = QuadratureGrid(*mu_range, contour_points)
    v_grid = QuadratureGrid(*c_range, contour_points)
    k = model.k_groups
    contour = marginal_contour(model, 0, k, u_grid, v_grid, levels=(0.68, 0.95))
    uu, vv = np.meshgrid(contour.u_nodes, contour.v_nodes, indexing="ij")
    write_table(
        out / "contour_mu_1_C_1.csv",
        ["mu_1", "C_1", "log_field"],
        np.column_stack([uu.ravel(), vv.ravel(), contour.log_field.ravel()]),
    )
    summary = {
        "log_z": oracle.log_z,
        "points_per_dim": points_per_dim,
        "converged": oracle.converged,
        "refinement_delta": oracle.refinement_delta,
        "knee": oracle.knee(),
        "contour_levels": {
            str(rho): {
                "log_level": contour.log_levels[rho],
                "bisection_mass": contour.masses[rho],
                "requadrature_mass": super_level_mass(contour, rho, u_grid, v_grid),
            }
            for rho in contour.log_levels
        },
    }
    write_json(out / "ground_truth.json", summary)
    return summary


# --------------------------------------------------------------------------
# corner data


def _label(run_dir: Path) -> str:
    man = run_dir / "manifest.json"
    if man.exists():
        return read_json(man)["config"]["method"]
    return run_dir.name


def run_corner(run_dirs: Sequence, out_dir, bins: int = 40, mass: float = 0.68, pairs: Optional[bool] = None) -> Path:
    """Histogram grids and 68% intervals for one or more runs.

    Writes ``marginals.csv`` and ``intervals.csv``; with two or more runs
    (or ``pairs=True``) also ``pairs.csv`` with 2-D densities.
    """
    if not run_dirs:
        raise ValueError("need at least one run directory")
    runs = []
    for d in map(Path, run_dirs):
        names, samples, weights = read_samples(d / "samples.csv")
        if weights is None:
            weights = np.full(samples.shape[0], 1.0 / samples.shape[0])
        runs.append((_label(d), names, samples, weights / weights.sum()))
    names = runs[0][1]
    if any(r[1] != names for r in runs[1:]):
        raise ValueError("runs have different parameter sets")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # weighted range, so zero-weight NS prior draws do not stretch the axes
    pooled = np.concatenate([r[2] for r in runs])
    pooled_w = np.concatenate([r[3] / len(runs) for r in runs])
    pooled, pooled_w = pooled[pooled_w > 0], pooled_w[pooled_w > 0]
    edges = [
        np.linspace(*weighted_quantile(pooled[:, j], pooled_w, [0.001, 0.999]), bins + 1) for j in range(len(names))
    ]

    marg_rows, int_rows, pair_rows = [], [], []
    for label, _, samples, weights in runs:
        ws = WeightedSampleSet(samples, weights)
        for j, name in enumerate(names):
            dens, e = np.histogram(samples[:, j], bins=edges[j], weights=weights, density=True)
            centres = 0.5 * (e[1:] + e[:-1])
            marg_rows += [[label, name, c, v] for c, v in zip(centres, dens)]
            lo, hi = equal_tailed_interval(ws, j, mass)
            int_rows.append([label, name, mass, lo, hi])
        if pairs or (pairs is None and len(runs) > 1):
            for a in range(len(names)):
                for b in range(a + 1, len(names)):
                    h, ea, eb = np.histogram2d(
                        samples[:, a], samples[:, b], bins=[edges[a], edges[b]], weights=weights, density=True
                    )
                    ca, cb = 0.5 * (ea[1:] + ea[:-1]), 0.5 * (eb[1:] + eb[:-1])
                    for i, x in enumerate(ca):
                        for jj, y in enumerate(cb):
                            pair_rows.append([label, names[a], names[b], x, y, h[i, jj]])
    write_table(out / "marginals.csv", ["method", "parameter", "x", "density"], marg_rows)
    write_table(out / "intervals.csv", ["method", "parameter", "mass", "lo", "hi"], int_rows)
    if pair_rows:
        write_table(out / "pairs.csv", ["method", "param_x", "param_y", "x", "y", "density"], pair_rows)
    return out


def run_train_flow(config: ExperimentConfig, out_dir=None) -> tuple[Path, TrainingTrace]:
    cfg = config.resolved()
    out = Path(out_dir or cfg.output_dir or default_output_root() / f"{cfg.model}-flow-seed{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    _, posterior = build_model(cfg)
    flow, trace = train_flow(cfg, posterior)
    save_flow(flow, out / "flow.bnaf")
    write_table(out / "training_trace.csv", ["epoch", "elbo"], [[float(i), e] for i, e in enumerate(trace.elbo_per_epoch)])
    write_json(
        out / "training.json",
        {
            "final_mean_elbo": trace.final_mean_elbo,
            "skipped_epochs": trace.n_skipped,
            "wall_time_s": trace.wall_time,
            "config": cfg.to_dict(),
        },
    )
    return out, trace
