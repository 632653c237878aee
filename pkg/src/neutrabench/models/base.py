"""Posterior containers shared by the samplers.

Both samplers talk to a *target* through a small duck-typed surface:

* ``dimension`` and ``parameter_names``
* ``log_density(x)`` / ``constrain(x)`` on R^k, used by NUTS
* ``cube_log_density(u)`` / ``cube_to_model(u)`` on the unit cube, used by
  nested sampling; the cube density already contains the transform
  log-Jacobian so that its integral over the cube is the evidence
* ``initial_point(rng)`` for chain initialisation

:class:`PosteriorModel` builds all of these from a prior, a likelihood and
two transforms. :class:`DensityTarget` wraps a bare log-density for tests
and quick experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import jax.numpy as jnp
import numpy as np


def _finite_or_neg_inf(value):
    return jnp.where(jnp.isnan(value), -jnp.inf, value)


@dataclass(frozen=True)
class PosteriorModel:
    dimension: int
    parameter_names: tuple[str, ...]
    log_prior: Callable
    log_likelihood: Callable
    support_transform: object
    cube_transform: object
    sample_prior: Optional[Callable[[np.random.Generator], np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "parameter_names", tuple(self.parameter_names))
        if len(self.parameter_names) != self.dimension:
            raise ValueError("one name per parameter required")

    def log_joint(self, theta):
        """Unnormalised log posterior in model coordinates."""
        return _finite_or_neg_inf(self.log_prior(theta) + self.log_likelihood(theta))

    def log_density(self, x):
        theta, log_jac = self.support_transform.forward(x)
        return self.log_joint(theta) + log_jac

    def constrain(self, x):
        return self.support_transform.forward(x)[0]

    def cube_log_density(self, u):
        theta, log_jac = self.cube_transform.forward(u)
        return _finite_or_neg_inf(self.log_joint(theta) + log_jac)

    def cube_to_model(self, u):
        return self.cube_transform.forward(u)[0]

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        """Unit-normal jitter around the unconstrained image of a prior draw."""
        if self.sample_prior is None:
            centre = np.zeros(self.dimension)
        else:
            centre = np.asarray(self.support_transform.inverse(self.sample_prior(rng)))
        return centre + rng.standard_normal(self.dimension)


@dataclass(frozen=True)
class DensityTarget:
    """A bare log-density on R^k and/or on the unit cube.

    ``log_density`` is used by NUTS, ``cube_log_density`` by nested sampling.
    Either may be omitted when only one sampler is used.
    """

    dimension: int
    log_density: Optional[Callable] = None
    cube_log_density: Optional[Callable] = None
    parameter_names: Sequence[str] = field(default=())
    to_model: Optional[Callable] = None

    def __post_init__(self):
        if not self.parameter_names:
            names = tuple(f"x{i}" for i in range(self.dimension))
            object.__setattr__(self, "parameter_names", names)

    def constrain(self, x):
        return x if self.to_model is None else self.to_model(x)

    def cube_to_model(self, u):
        return u if self.to_model is None else self.to_model(u)

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.dimension)
