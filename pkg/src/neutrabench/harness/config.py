"""Experiment configuration: JSON file plus command-line overrides.

Defaults depend on the model and method and mirror the benchmark settings:
1600 / 2400 live points for the Gaussian fit without / with NeuTra, 1200 /
800 for NSI; 4 chains of 3000 + 5000 iterations for the Gaussian fit and 20
chains of 2000 + 5000 with fixed step sizes 0.06 / 0.12 for NSI.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

MODELS = ("gaussian_fit", "nsi")
METHODS = ("ns", "neutra-ns", "nuts", "neutra-nuts", "ground-truth")
OUTPUT_ENV = "NEUTRABENCH_OUTPUT"


class ConfigError(ValueError):
    """Invalid or contradictory experiment settings."""


_DEFAULTS = {
    "gaussian_fit": {
        "n_live": {"ns": 1600, "neutra-ns": 2400},
        "frac_remain": 0.01,
        "chains": 4,
        "warmup": 3000,
        "samples": 5000,
        "step_size": {},
        "flow_stacks": 2,
        "flow_hidden": [4, 4],
        "epochs": 5000,
        "repetitions": 4,
    },
    "nsi": {
        "n_live": {"ns": 1200, "neutra-ns": 800},
        "frac_remain": 0.02,
        "chains": 20,
        "warmup": 2000,
        "samples": 5000,
        "step_size": {"nuts": 0.06, "neutra-nuts": 0.12},
        "flow_stacks": 3,
        "flow_hidden": [10, 10],
        "epochs": 10000,
        "repetitions": 6,
    },
}


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "neutrabench-output"))


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "gaussian_fit"
    method: str = "ns"
    seed: int = 0
    # nested sampling
    n_live: Optional[int] = None
    frac_remain: Optional[float] = None
    stochastic_shrinkage: bool = False
    # NUTS
    chains: Optional[int] = None
    warmup: Optional[int] = None
    samples: Optional[int] = None
    target_accept: Optional[float] = None
    step_size: Optional[float] = None
    max_depth: int = 10
    # flow
    flow_stacks: Optional[int] = None
    flow_hidden: Optional[list] = None
    epochs: Optional[int] = None
    batch: int = 30
    learning_rate: float = 1e-2
    final_learning_rate: float = 1e-3
    flow_path: Optional[str] = None
    # data
    dataset_path: Optional[str] = None
    dataset_seed: Optional[int] = None
    # bench
    repetitions: Optional[int] = None
    methods: Optional[list] = None
    output_dir: Optional[str] = None
    surrogate: dict = field(default_factory=dict)

    def resolved(self) -> "ExperimentConfig":
        """Fill unset fields with model/method defaults and validate."""
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.step_size is not None and self.target_accept is not None:
            raise ConfigError("step_size and target_accept are mutually exclusive")
        d = _DEFAULTS[self.model]
        updates = {}
        if self.n_live is None:
            updates["n_live"] = d["n_live"].get(self.method, d["n_live"]["ns"])
        for key in ("frac_remain", "chains", "warmup", "samples", "flow_stacks", "flow_hidden", "epochs", "repetitions"):
            if getattr(self, key) is None:
                updates[key] = d[key]
        if self.step_size is None and self.target_accept is None:
            fixed = d["step_size"].get(self.method)
            if fixed is not None:
                updates["step_size"] = fixed
            else:
                updates["target_accept"] = 0.8
        cfg = replace(self, **updates)
        cfg._validate()
        return cfg

    def _validate(self) -> None:
        if self.n_live is not None and self.n_live < 2:
            raise ConfigError("n_live must be at least 2")
        if self.frac_remain is not None and not 0 < self.frac_remain < 1:
            raise ConfigError("frac_remain must lie in (0, 1)")
        if self.chains is not None and self.chains < 1:
            raise ConfigError("chains must be at least 1")
        if (self.warmup is not None and self.warmup < 0) or (self.samples is not None and self.samples < 0):
            raise ConfigError("warmup and samples must be nonnegative")
        if self.target_accept is not None and not 0 < self.target_accept < 1:
            raise ConfigError("target_accept must lie in (0, 1)")
        if self.step_size is not None and not self.step_size > 0:
            raise ConfigError("step_size must be positive")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.batch < 1:
            raise ConfigError("batch must be at least 1")
        if self.repetitions is not None and self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.methods:
            bad = [m for m in self.methods if m not in METHODS or m == "ground-truth"]
            if bad:
                raise ConfigError(f"cannot bench methods {bad}")

    @property
    def uses_flow(self) -> bool:
        return self.method.startswith("neutra")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def load_config(path: Optional[str], overrides: dict) -> ExperimentConfig:
    """Read a JSON config (if given) and apply non-``None`` overrides; flags win."""
    data: dict = {}
    if path:
        with open(path) as fh:
            data = json.load(fh)
        if "config" in data and isinstance(data["config"], dict):
            data = data["config"]  # a run manifest
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)
