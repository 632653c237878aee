"""Gaussian fit with unknown means and log-variances (centered parameterisation).

For each group ``i`` the data row ``x_i`` is modelled as

    mu_i ~ N(0, s2),  C_i ~ N(0, s2),  x_ij ~ N(mu_i, exp(C_i))

with ``s2 = 10``. ``exp(C_i)`` is the *variance*. The parameter vector is
``(mu_1..mu_k, C_1..C_k)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

import jax.numpy as jnp
import numpy as np

from neutrabench.models.base import PosteriorModel
from neutrabench.models.densities import LOG_2PI, normal_log_pdf
from neutrabench.models.transforms import IdentityTransform, LogisticTransform

PRIOR_VARIANCE = 10.0
REFERENCE_DATASET_SEED = 2024
REFERENCE_DATASET_FILE = "gaussian_fit_reference.csv"


@dataclass(frozen=True)
class GaussianFitModel:
    data: np.ndarray
    prior_variance: float = PRIOR_VARIANCE

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError("data must be a (k_groups, n_obs) matrix")
        if not np.all(np.isfinite(data)):
            raise ValueError("data must be finite")
        if self.prior_variance <= 0:
            raise ValueError("prior variance must be positive")
        object.__setattr__(self, "data", data)

    @property
    def k_groups(self) -> int:
        return self.data.shape[0]

    @property
    def n_obs(self) -> int:
        return self.data.shape[1]

    @property
    def dimension(self) -> int:
        return 2 * self.k_groups

    @property
    def parameter_names(self) -> tuple[str, ...]:
        k = self.k_groups
        return tuple(f"mu_{i + 1}" for i in range(k)) + tuple(f"C_{i + 1}" for i in range(k))

    def split(self, theta):
        k = self.k_groups
        return theta[..., :k], theta[..., k:]

    def log_prior(self, theta):
        return jnp.sum(normal_log_pdf(theta, 0.0, self.prior_variance))

    def log_likelihood(self, theta):
        mu, c = self.split(theta)
        n = self.n_obs
        sq = jnp.sum((self.data - mu[:, None]) ** 2, axis=1)
        per_group = -0.5 * n * LOG_2PI - 0.5 * n * c - 0.5 * jnp.exp(-c) * sq
        return jnp.sum(per_group)

    def log_joint(self, theta):
        return self.log_prior(theta) + self.log_likelihood(theta)

    def posterior(self) -> PosteriorModel:
        """Bundle with an identity support map and a logistic cube map of scale 4*sigma."""
        sigma = np.sqrt(self.prior_variance)

        def sample_prior(rng):
            return rng.normal(0.0, sigma, self.dimension)

        return PosteriorModel(
            dimension=self.dimension,
            parameter_names=self.parameter_names,
            log_prior=self.log_prior,
            log_likelihood=self.log_likelihood,
            support_transform=IdentityTransform(self.dimension),
            cube_transform=LogisticTransform(
                np.full(self.dimension, 4.0 * sigma), np.zeros(self.dimension)
            ),
            sample_prior=sample_prior,
        )


def gaussian_fit_log_density(model: GaussianFitModel, theta) -> float:
    """Log prior plus log likelihood at ``theta = (mu..., C...)``."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (model.dimension,):
        raise ValueError(
            f"expected {model.dimension} parameters for {model.k_groups} groups, got shape {theta.shape}"
        )
    return float(model.log_joint(jnp.asarray(theta)))


def make_dataset(seed: int, k_groups: int = 3, n_obs: int = 2) -> np.ndarray:
    """Standard-normal data matrix, reproducible from ``seed``."""
    return np.random.default_rng(seed).standard_normal((k_groups, n_obs))


def load_dataset(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row and not row[0].startswith("#")]
    return np.asarray(rows, dtype=np.float64)


def save_dataset(data: np.ndarray, path, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        for row in np.atleast_2d(data):
            writer.writerow([f"{v:.17g}" for v in row])


def load_reference_dataset() -> np.ndarray:
    """The pinned 3x2 dataset every oracle-vs-sampler comparison uses."""
    ref = resources.files("neutrabench.data").joinpath(REFERENCE_DATASET_FILE)
    with resources.as_file(ref) as path:
        return load_dataset(path)


def reference_model() -> GaussianFitModel:
    return GaussianFitModel(load_reference_dataset())
