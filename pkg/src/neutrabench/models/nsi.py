"""Neutrino non-standard-interaction (NSI) statistical model.

Eight parameters: six flavour couplings ``eps_ab`` in (-5, 5), the
charged-plane angle ``phi_angle`` in (-pi/2, pi/2) and ``sin_eta`` in
(-1, 1), all with uniform priors. The data enter through

* a Poisson count of nuclear recoils with mean ``lambda_bkg + lambda_NR``;
* a normal (truncated at zero) measurement of the electron-recoil ratio,
  evaluated at the ratio ``r_ER`` the rate plugin predicts.

Expected rates come from a :class:`RatePlugin`. The real solar-neutrino rate
calculation is not part of this package; :class:`SurrogateRate` is a smooth
stand-in whose constants are configuration only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import jax.numpy as jnp
import numpy as np

from neutrabench.models.base import PosteriorModel
from neutrabench.models.densities import poisson_log_pmf, truncnorm_log_pdf
from neutrabench.models.transforms import AffineTransform, SigmoidTransform

FLAVOURS = ("ee", "emu", "etau", "mumu", "mutau", "tautau")
PARAMETER_NAMES = tuple(f"eps_{f}" for f in FLAVOURS) + ("phi_angle", "sin_eta")
EPS_BOUND = 5.0
SQRT5 = float(np.sqrt(5.0))

LOWER = np.array([-EPS_BOUND] * 6 + [-np.pi / 2, -1.0])
UPPER = np.array([EPS_BOUND] * 6 + [np.pi / 2, 1.0])


@dataclass(frozen=True)
class NsiParameters:
    eps: np.ndarray
    phi_angle: float
    sin_eta: float

    def __post_init__(self):
        eps = np.asarray(self.eps, dtype=np.float64)
        if eps.shape != (6,):
            raise ValueError("need six flavour couplings")
        object.__setattr__(self, "eps", eps)

    @classmethod
    def from_vector(cls, theta) -> "NsiParameters":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[:6], float(theta[6]), float(theta[7]))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.eps, [self.phi_angle, self.sin_eta]])

    def in_support(self) -> bool:
        theta = self.to_vector()
        return bool(np.all(theta > LOWER) and np.all(theta < UPPER))


@dataclass(frozen=True)
class NsiCouplings:
    eps_p: np.ndarray
    eps_e: np.ndarray
    eps_n: np.ndarray


def sphere_to_cartesian(eps, phi_angle, sin_eta) -> NsiCouplings:
    """Proton/electron/neutron couplings from the spherical parameterisation."""
    cos_eta = jnp.sqrt(1.0 - sin_eta**2)
    eps = jnp.asarray(eps)
    return NsiCouplings(
        eps_p=SQRT5 * eps * cos_eta * jnp.cos(phi_angle),
        eps_e=SQRT5 * eps * cos_eta * jnp.sin(phi_angle),
        eps_n=SQRT5 * eps * sin_eta,
    )


def nsi_sphere_to_cartesian(p: NsiParameters) -> NsiCouplings:
    c = sphere_to_cartesian(p.eps, p.phi_angle, p.sin_eta)
    return NsiCouplings(np.asarray(c.eps_p), np.asarray(c.eps_e), np.asarray(c.eps_n))


@dataclass(frozen=True)
class NsiObservation:
    n_nr_observed: int = 6
    lambda_bkg: float = 5.38
    er_ratio_mean: float = 1.72
    er_ratio_sigma: float = 1.72

    def __post_init__(self):
        if min(self.n_nr_observed, self.lambda_bkg, self.er_ratio_mean, self.er_ratio_sigma) < 0:
            raise ValueError("observation constants must be nonnegative")


class RatePlugin(Protocol):
    """Expected rates for a set of couplings.

    Implementations must be jax-traceable (the samplers jit and differentiate
    through them) and return the Standard-Model values ``lambda_sm`` and 1 at
    zero couplings.
    """

    def nr_rate(self, couplings: NsiCouplings): ...

    def er_ratio(self, couplings: NsiCouplings): ...


@dataclass(frozen=True)
class SurrogateRate:
    """Quadratic stand-in for the solar-neutrino rate calculation.

    ``lambda_NR = lambda_sm * (w_p <eps_p> + w_n <eps_n> + 1)^2`` and
    ``r_ER = (w_e <eps_e> + 1)^2``, where ``<.>`` is the flavour-weighted
    mean coupling. With ``w_p = sin 35deg`` and ``w_n = cos 35deg`` the
    nuclear term vanishes along ``eta = -35deg`` (at ``phi_angle = 0``), which gives
    the posterior a proton/neutron cancellation ridge.
    """

    lambda_sm: float = 0.62
    w_p: float = float(np.sin(np.deg2rad(35.0)))
    w_n: float = float(np.cos(np.deg2rad(35.0)))
    w_e: float = 1.0
    flavour_weights: tuple[float, ...] = field(default=(1.0 / 6,) * 6)

    def __post_init__(self):
        if len(self.flavour_weights) != 6:
            raise ValueError("one weight per flavour pair")

    def _mean(self, eps):
        return jnp.dot(jnp.asarray(self.flavour_weights), eps)

    def nr_rate(self, couplings: NsiCouplings):
        amp = self.w_p * self._mean(couplings.eps_p) + self.w_n * self._mean(couplings.eps_n) + 1.0
        return self.lambda_sm * amp**2

    def er_ratio(self, couplings: NsiCouplings):
        amp = self.w_e * self._mean(couplings.eps_e) + 1.0
        return amp**2

    def to_dict(self) -> dict:
        return {
            "lambda_sm": self.lambda_sm,
            "w_p": self.w_p,
            "w_n": self.w_n,
            "w_e": self.w_e,
            "flavour_weights": list(self.flavour_weights),
        }


LOG_PRIOR_VOLUME = float(np.sum(np.log(UPPER - LOWER)))


@dataclass(frozen=True)
class NsiModel:
    observation: NsiObservation = NsiObservation()
    plugin: RatePlugin = SurrogateRate()

    dimension = 8
    parameter_names = PARAMETER_NAMES

    def log_prior(self, theta):
        theta = jnp.asarray(theta)
        inside = jnp.all((theta > LOWER) & (theta < UPPER))
        return jnp.where(inside, -LOG_PRIOR_VOLUME, -jnp.inf)

    def couplings(self, theta) -> NsiCouplings:
        theta = jnp.asarray(theta)
        # clip so that out-of-support points give -inf from the prior, not NaN here
        sin_eta = jnp.clip(theta[7], -1.0, 1.0)
        return sphere_to_cartesian(theta[:6], theta[6], sin_eta)

    def log_likelihood(self, theta):
        obs = self.observation
        c = self.couplings(theta)
        lam = obs.lambda_bkg + self.plugin.nr_rate(c)
        r_er = self.plugin.er_ratio(c)
        return poisson_log_pmf(obs.n_nr_observed, lam) + truncnorm_log_pdf(
            r_er, obs.er_ratio_mean, obs.er_ratio_sigma, 0.0
        )

    def log_joint(self, theta):
        return self.log_prior(theta) + self.log_likelihood(theta)

    def posterior(self) -> PosteriorModel:
        """Affine cube map and sigmoid support map, both onto the prior box."""

        def sample_prior(rng):
            return rng.uniform(LOWER, UPPER)

        return PosteriorModel(
            dimension=self.dimension,
            parameter_names=self.parameter_names,
            log_prior=self.log_prior,
            log_likelihood=self.log_likelihood,
            support_transform=SigmoidTransform(LOWER, UPPER),
            cube_transform=AffineTransform(LOWER, UPPER),
            sample_prior=sample_prior,
        )


def nsi_log_density(p: NsiParameters, obs: NsiObservation, plugin: RatePlugin) -> float:
    """Log prior + Poisson NR term + truncated-normal ER term; ``-inf`` outside the prior box."""
    if not p.in_support():
        return -np.inf
    return float(NsiModel(obs, plugin).log_joint(jnp.asarray(p.to_vector())))
