"""Neural-transport reparameterisation.

A flow ``f`` pushes a standard-normal latent ``z`` to the model's
unconstrained space. The latent density

    log p(z) = model.log_density(f(z)) + log|df/dz|

(where ``model.log_density`` already carries the support-transform Jacobian)
integrates to the model evidence, so both samplers can run on it unchanged:
NUTS directly in ``z``, nested sampling after a logistic map from the unit
cube to ``z``.

Training maximises the ELBO ``E_z[log p(z) - log N(z; 0, I)]`` with Adam and
a cosine-decayed learning rate.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np
import optax

from neutrabench.flows import BnafFlow, FlowConfig, flow_apply
from neutrabench.models.densities import LOG_2PI
from neutrabench.models.transforms import LogisticTransform

log = logging.getLogger(__name__)

MAX_NAN_EPOCHS = 50
# logistic scale for the latent cube map; the latent posterior is close to N(0, I)
LATENT_CUBE_SCALE = 4.0


class TrainingError(RuntimeError):
    """The ELBO stayed non-finite for too many consecutive epochs."""


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-2
    final_learning_rate: float = 1e-3

    def schedule(self, epochs: int):
        alpha = self.final_learning_rate / self.learning_rate
        return optax.cosine_decay_schedule(self.learning_rate, max(epochs, 1), alpha=alpha)


@dataclass(frozen=True)
class TrainingTrace:
    elbo_per_epoch: np.ndarray
    final_mean_elbo: float
    n_skipped: int = 0
    wall_time: float = 0.0

    def moving_average(self, window: int = 200) -> np.ndarray:
        x = np.asarray(self.elbo_per_epoch)
        if x.size < window:
            return np.array([np.nanmean(x)])
        kernel = np.ones(window) / window
        return np.convolve(x, kernel, mode="valid")


def _std_normal_logpdf(z):
    return -0.5 * jnp.sum(z**2, axis=-1) - 0.5 * z.shape[-1] * LOG_2PI


def neutra_log_density(flow: BnafFlow, model, z):
    """Latent log density ``log p(f(z)) + log|df/dz|``; jax-traceable, ``-inf`` propagates."""
    x, log_det = flow.forward(z)
    return model.log_density(x) + log_det


def _elbo_terms(flow_params, flow: BnafFlow, model, z_batch):
    def one(z):
        x, log_det, _ = flow_apply(flow_params, z, flow.config.hidden_dims)
        return model.log_density(x) + log_det - _std_normal_logpdf(z)

    return jax.vmap(one)(z_batch)


def elbo_estimate(flow: BnafFlow, model, batch: int, rng) -> float:
    """Monte Carlo ELBO over ``batch`` standard-normal draws.

    Returns ``-inf`` when every draw lands outside the model support.
    """
    if batch < 1:
        raise ValueError("batch must be at least 1")
    key = rng if not isinstance(rng, (int, np.integer, np.random.Generator)) else _key_from(rng)
    z = jax.random.normal(key, (batch, flow.dimension))
    terms = np.asarray(_elbo_terms(flow.flow_params, flow, model, z))
    if not np.any(np.isfinite(terms)):
        return -np.inf
    return float(np.mean(terms))


def _key_from(rng) -> jax.Array:
    if isinstance(rng, np.random.Generator):
        return jax.random.PRNGKey(int(rng.integers(2**63 - 1)))
    return jax.random.PRNGKey(int(rng))


def train_neutra(
    model,
    flow_config: FlowConfig = FlowConfig(),
    epochs: int = 5000,
    batch: int = 30,
    optimizer: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    flow: Optional[BnafFlow] = None,
) -> tuple[BnafFlow, TrainingTrace]:
    """Fit a BNAF flow by stochastic gradient ascent on the ELBO.

    One optimiser step per epoch on a fresh batch. A step with a non-finite
    loss or gradient is skipped; ``MAX_NAN_EPOCHS`` consecutive skips raise
    :class:`TrainingError`. Deterministic given ``seed``.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    if batch < 1:
        raise ValueError("batch must be at least 1")
    init_key, loop_key = jax.random.split(jax.random.PRNGKey(seed))
    if flow is None:
        flow = BnafFlow.init(model.dimension, flow_config, seed=int(jax.random.randint(init_key, (), 0, 2**31 - 1)))
    tx = optax.adam(optimizer.schedule(epochs))

    def loss_fn(flow_params, z):
        return -jnp.mean(_elbo_terms(flow_params, flow, model, z))

    @jax.jit
    def step(flow_params, opt_state, epoch):
        z = jax.random.normal(jax.random.fold_in(loop_key, epoch), (batch, flow.dimension))
        loss, grads = jax.value_and_grad(loss_fn)(flow_params, z)
        ok = jnp.isfinite(loss) & jnp.all(
            jnp.array([jnp.all(jnp.isfinite(g)) for g in jax.tree_util.tree_leaves(grads)])
        )
        grads = jax.tree_util.tree_map(lambda g: jnp.where(ok, g, 0.0), grads)
        updates, new_state = tx.update(grads, opt_state, flow_params)
        new_params = optax.apply_updates(flow_params, updates)
        keep = lambda new, old: jax.tree_util.tree_map(lambda a, b: jnp.where(ok, a, b), new, old)
        return keep(new_params, flow_params), keep(new_state, opt_state), -loss, ok

    flow_params = flow.flow_params
    opt_state = tx.init(flow_params)
    step(flow_params, opt_state, 0)  # compile before timing
    elbos = np.empty(epochs)
    nan_run = skipped = 0
    t0 = time.perf_counter()
    for epoch in range(epochs):
        flow_params, opt_state, elbo, ok = step(flow_params, opt_state, epoch)
        elbos[epoch] = float(elbo) if bool(ok) else np.nan
        if bool(ok):
            nan_run = 0
        else:
            nan_run += 1
            skipped += 1
            if nan_run >= MAX_NAN_EPOCHS:
                raise TrainingError(f"ELBO non-finite for {MAX_NAN_EPOCHS} consecutive epochs (epoch {epoch})")
    wall = time.perf_counter() - t0
    tail = elbos[-min(100, epochs) :]
    final = float(np.nanmean(tail)) if np.any(np.isfinite(tail)) else float("nan")
    return flow.with_flow_params(flow_params), TrainingTrace(elbos, final, skipped, wall)


@dataclass(frozen=True)
class NeuTraModel:
    """A model reparameterised through a trained flow.

    Exposes the same surface as :class:`~neutrabench.models.base.PosteriorModel`:
    a latent density for NUTS and a cube density for nested sampling; both
    map their samples back to model space.
    """

    flow: BnafFlow
    model: object
    cube_scale: float = LATENT_CUBE_SCALE
    cube_transform: LogisticTransform = field(init=False)

    def __post_init__(self):
        k = self.flow.dimension
        if k != self.model.dimension:
            raise ValueError("flow and model dimensions differ")
        object.__setattr__(self, "cube_transform", LogisticTransform(np.full(k, self.cube_scale), np.zeros(k)))

    @property
    def dimension(self) -> int:
        return self.model.dimension

    @property
    def parameter_names(self):
        return self.model.parameter_names

    def log_density(self, z):
        return neutra_log_density(self.flow, self.model, z)

    def constrain(self, z):
        return self.model.constrain(self.flow.forward(z)[0])

    def cube_log_density(self, u):
        z, log_jac = self.cube_transform.forward(u)
        value = self.log_density(z) + log_jac
        return jnp.where(jnp.isnan(value), -jnp.inf, value)

    def cube_to_model(self, u):
        return self.constrain(self.cube_transform.forward(u)[0])

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.dimension)


def compose_for_sampling(flow: BnafFlow, model, cube_scale: float = LATENT_CUBE_SCALE) -> NeuTraModel:
    return NeuTraModel(flow, model, cube_scale)
