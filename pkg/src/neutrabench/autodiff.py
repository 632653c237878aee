"""Reverse-mode gradients for log-densities and flows.

Gradients come from ``jax.value_and_grad``: the function is traced once into
a graph of primitive operations and differentiated with a single backward
pass. Anything written with ``jax.numpy`` (arithmetic, exp/log, tanh, sqrt,
erf, powers, sums, min/max) is supported.

A non-finite value or gradient does not raise. It is reported through
:attr:`GradientRecord.divergent` so that a sampler can treat the point as a
divergence and move on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import erf, erfc

__all__ = [
    "GradientRecord",
    "value_and_grad",
    "make_value_and_grad",
    "finite_difference_grad",
    "norm_cdf",
    "log_norm_sf",
]

_SQRT_HALF = 0.7071067811865476


@dataclass(frozen=True)
class GradientRecord:
    value: float
    gradient: np.ndarray
    divergent: bool = False

    def __post_init__(self):
        if self.gradient.ndim != 1:
            raise ValueError("gradient must be a vector")


def _record(value, grad) -> GradientRecord:
    value = float(value)
    grad = np.asarray(grad, dtype=np.float64)
    divergent = not (np.isfinite(value) and np.all(np.isfinite(grad)))
    if divergent and np.isfinite(value):
        # finite value with a broken gradient is still unusable
        value = np.nan
    return GradientRecord(value, grad, divergent)


def value_and_grad(f: Callable, theta) -> GradientRecord:
    """Evaluate ``f`` and its gradient at ``theta`` in one reverse pass."""
    theta = jnp.asarray(theta, dtype=jnp.float64)
    if theta.ndim != 1:
        raise ValueError(f"expected a parameter vector, got shape {theta.shape}")
    value, grad = jax.value_and_grad(f)(theta)
    return _record(value, grad)


def make_value_and_grad(f: Callable) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Compile ``f`` once and return a fast ``theta -> (value, grad)`` callable.

    This is what the samplers use in their inner loops. The returned value is
    ``nan`` whenever anything in the evaluation went non-finite, except that a
    clean ``-inf`` (outside the support) is passed through.
    """
    compiled = jax.jit(jax.value_and_grad(f))

    def evaluate(theta):
        value, grad = compiled(theta)
        value = float(value)
        grad = np.asarray(grad)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            if value != -np.inf:
                value = np.nan
        return value, grad

    return evaluate


def finite_difference_grad(f: Callable, theta, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, ``(f(x + h e_i) - f(x - h e_i)) / 2h``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h
        grad[i] = (float(f(theta + step)) - float(f(theta - step))) / (2.0 * h)
    return grad


def norm_cdf(x):
    """Standard normal CDF via erf."""
    return 0.5 * (1.0 + erf(jnp.asarray(x) * _SQRT_HALF))


def log_norm_sf(x):
    """``log(1 - Phi(x))`` computed through erfc so the upper tail keeps precision."""
    return jnp.log(0.5 * erfc(jnp.asarray(x) * _SQRT_HALF))
