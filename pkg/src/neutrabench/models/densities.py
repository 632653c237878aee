"""Elementary log-densities used by the likelihoods."""

from __future__ import annotations

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import gammaln

from neutrabench.autodiff import log_norm_sf

LOG_2PI = float(np.log(2.0 * np.pi))


def _concrete(x) -> bool:
    return not isinstance(x, jax.core.Tracer)


def poisson_log_pmf(n, lam):
    """Log-probability of ``n`` counts under a Poisson with mean ``lam``."""
    if _concrete(lam) and np.any(np.asarray(lam) <= 0):
        raise ValueError(f"Poisson mean must be positive, got {lam}")
    n = jnp.asarray(n, dtype=jnp.float64)
    return n * jnp.log(lam) - lam - gammaln(n + 1.0)


def normal_log_pdf(x, mean, variance):
    return -0.5 * (LOG_2PI + jnp.log(variance) + (x - mean) ** 2 / variance)


def truncnorm_log_pdf(x, mean, sigma, lower):
    """Normal log-density truncated to ``[lower, inf)``, normalization included.

    Returns ``-inf`` below the truncation point.
    """
    if _concrete(sigma) and np.any(np.asarray(sigma) <= 0):
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = jnp.asarray(x, dtype=jnp.float64)
    z = (x - mean) / sigma
    log_mass = log_norm_sf((lower - mean) / sigma)
    logp = -0.5 * z**2 - jnp.log(sigma) - 0.5 * LOG_2PI - log_mass
    return jnp.where(x < lower, -jnp.inf, logp)
