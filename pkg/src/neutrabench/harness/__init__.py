"""Command-line orchestration, configuration and artifact files."""

from neutrabench.harness.config import ConfigError, ExperimentConfig, load_config
from neutrabench.harness.runner import (
    RunArtifact,
    RunFailed,
    build_model,
    run_bench,
    run_corner,
    run_experiment,
    run_ground_truth,
    run_train_flow,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunArtifact",
    "RunFailed",
    "build_model",
    "load_config",
    "run_bench",
    "run_corner",
    "run_experiment",
    "run_ground_truth",
    "run_train_flow",
]
