"""Bayesian evidence and posterior benchmarks: nested sampling, NUTS and NeuTra.

Importing the package switches JAX to double precision; every density,
gradient and flow in here assumes float64.
"""

import jax

jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"

from neutrabench.models import (  # noqa: E402
    GaussianFitModel,
    NsiModel,
    PosteriorModel,
    SurrogateRate,
)

__all__ = [
    "GaussianFitModel",
    "NsiModel",
    "PosteriorModel",
    "SurrogateRate",
    "__version__",
]
