"""Bijections between sampler coordinates and model coordinates.

Two families are needed. Nested sampling works on the open unit cube, so
every model carries a *cube* transform (``LogisticTransform`` for unbounded
parameters, ``AffineTransform`` for bounded ones). NUTS works on R^k, so
every model also carries an *unconstrained* transform (``IdentityTransform``
or ``SigmoidTransform``).

Each transform exposes ``forward(x) -> (theta, log_jac)`` where ``log_jac``
is ``log|d theta / d x|`` summed over coordinates, plus ``inverse``. The
``forward`` methods are jax-traceable and do not validate; use
:func:`logistic_transform` for a checked entry point.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np
from jax.nn import log_sigmoid, sigmoid
from jax.scipy.special import logit, ndtri

from neutrabench.autodiff import norm_cdf
from neutrabench.models.densities import LOG_2PI


def _vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class LogisticTransform:
    """Cube to R^k: ``theta = scale * logit(u) + shift``."""

    scale: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scale", _vec(self.scale))
        object.__setattr__(self, "shift", _vec(self.shift))
        if np.any(self.scale <= 0):
            raise ValueError("logistic scale must be positive")

    def forward(self, u):
        u = jnp.asarray(u)
        theta = self.scale * logit(u) + self.shift
        log_jac = jnp.sum(jnp.log(self.scale) - jnp.log(u) - jnp.log1p(-u))
        return theta, log_jac

    def inverse(self, theta):
        return sigmoid((jnp.asarray(theta) - self.shift) / self.scale)

    def log_abs_det_jacobian(self, u):
        return self.forward(u)[1]


@dataclass(frozen=True)
class AffineTransform:
    """Cube to the box ``(lower, upper)``: ``theta = lower + (upper - lower) * u``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", _vec(self.lower))
        object.__setattr__(self, "upper", _vec(self.upper))
        if np.any(self.upper <= self.lower):
            raise ValueError("empty box")

    def forward(self, u):
        width = self.upper - self.lower
        theta = self.lower + width * jnp.asarray(u)
        return theta, jnp.sum(jnp.log(width)) * jnp.ones(())

    def inverse(self, theta):
        return (jnp.asarray(theta) - self.lower) / (self.upper - self.lower)

    def log_abs_det_jacobian(self, u):
        return self.forward(u)[1]


@dataclass(frozen=True)
class GaussianQuantileTransform:
    """Cube to R^k through the normal quantile: ``theta = loc + scale * Phi^-1(u)``."""

    loc: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "loc", _vec(self.loc))
        object.__setattr__(self, "scale", _vec(self.scale))

    def forward(self, u):
        x = ndtri(jnp.asarray(u))
        theta = self.loc + self.scale * x
        # d theta / du = scale / phi(x)
        log_jac = jnp.sum(jnp.log(self.scale) + 0.5 * LOG_2PI + 0.5 * x**2)
        return theta, log_jac

    def inverse(self, theta):
        return norm_cdf((jnp.asarray(theta) - self.loc) / self.scale)

    def log_abs_det_jacobian(self, u):
        return self.forward(u)[1]


@dataclass(frozen=True)
class IdentityTransform:
    dimension: int

    def forward(self, x):
        x = jnp.asarray(x)
        return x, jnp.zeros(())

    def inverse(self, theta):
        return jnp.asarray(theta)

    def log_abs_det_jacobian(self, x):
        return self.forward(x)[1]


@dataclass(frozen=True)
class SigmoidTransform:
    """R^k to the box ``(lower, upper)`` through the logistic sigmoid."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", _vec(self.lower))
        object.__setattr__(self, "upper", _vec(self.upper))
        if np.any(self.upper <= self.lower):
            raise ValueError("empty box")

    def forward(self, y):
        y = jnp.asarray(y)
        width = self.upper - self.lower
        theta = self.lower + width * sigmoid(y)
        log_jac = jnp.sum(jnp.log(width) + log_sigmoid(y) + log_sigmoid(-y))
        return theta, log_jac

    def inverse(self, theta):
        frac = (jnp.asarray(theta) - self.lower) / (self.upper - self.lower)
        return logit(frac)

    def log_abs_det_jacobian(self, y):
        return self.forward(y)[1]


def logistic_transform(u, scale=1.0, shift=0.0, *, inverse: bool = False):
    """Checked logistic map between the open unit cube and R^k.

    Forward returns ``(theta, log_jac)``. With ``inverse=True`` the first
    argument is a model-space point and the cube point is returned.

    >>> theta, log_jac = logistic_transform([0.5])
    >>> float(theta[0]), round(float(log_jac), 12) == round(float(np.log(4.0)), 12)
    (0.0, True)
    """
    transform = LogisticTransform(scale, shift)
    if inverse:
        theta = _vec(u)
        if not np.all(np.isfinite(theta)):
            raise ValueError("model-space point must be finite")
        return np.asarray(transform.inverse(theta))
    u = _vec(u)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("logistic transform needs every coordinate strictly inside (0, 1)")
    theta, log_jac = transform.forward(u)
    return np.asarray(theta), float(log_jac)
