"""Nested sampling on the unit cube.

The sampler works on any target that exposes ``dimension``,
``cube_log_density(u)`` (log likelihood times prior, already including the
cube-to-model Jacobian, so the prior on the cube is uniform) and
``cube_to_model(u)``.

Replacement points are drawn by likelihood-constrained slice sampling: start
from a random surviving live point and take ``2k`` slice moves along random
unit directions. Each move starts from the full chord of the cube along the
direction and shrinks towards the current point on rejection. The whole
replacement is one jitted ``lax.while_loop``.

Prior volumes follow the deterministic mean shrinkage ``V_i = exp(-i/N)``;
shells are ``V_{i-1} - V_i`` so that they telescope exactly. A stochastic
``Beta(N, 1)`` shrinkage is available for error studies.
"""

from __future__ import annotations

import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)

MAX_DIRECTION_FAILURES = 100
MIN_BRACKET_WIDTH = 1e-12
DEFAULT_FRAC_REMAIN = 0.01
# float64 values strictly inside (0, 1) that logit maps to finite numbers
_EDGE = 1e-300
_COMPILED_CACHE_SIZE = 8
# target identity -> (target, n_steps, kernel, batch_logl, to_model); holds the
# target itself so an id cannot be reused while its entry is alive
_compiled: "OrderedDict[int, tuple]" = OrderedDict()


class NestedSamplerError(RuntimeError):
    """The replacement sampler could not find a point above the threshold."""


@dataclass(frozen=True)
class LivePointSet:
    points: np.ndarray
    log_likelihoods: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        logl = np.asarray(self.log_likelihoods, dtype=np.float64)
        if pts.ndim != 2 or logl.shape != (pts.shape[0],):
            raise ValueError("need one log-likelihood per live point")
        if not np.all((pts > 0) & (pts < 1)):
            raise ValueError("live points must lie inside the open unit cube")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "log_likelihoods", logl)

    @property
    def n_live(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class DeadPoint:
    point: np.ndarray
    log_l: float
    log_volume_shell: float


@dataclass(frozen=True)
class NsRunResult:
    log_z: float
    log_z_err: float
    samples: np.ndarray
    weights: np.ndarray
    n_likelihood_evals: int
    n_iterations: int
    information: float = 0.0
    wall_time: float = 0.0
    log_likelihoods: np.ndarray = field(default_factory=lambda: np.empty(0))
    parameter_names: tuple = ()

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


class SliceResult(NamedTuple):
    point: jax.Array
    log_l: jax.Array
    n_evals: jax.Array
    n_failures: jax.Array


def _chord(x, d):
    """Parameter range ``(lo, hi)`` with ``x + t d`` inside the unit cube."""
    safe = jnp.where(d == 0, 1.0, d)
    t0, t1 = -x / safe, (1.0 - x) / safe
    lo = jnp.where(d == 0, -jnp.inf, jnp.minimum(t0, t1))
    hi = jnp.where(d == 0, jnp.inf, jnp.maximum(t0, t1))
    return jnp.max(lo), jnp.min(hi)


def make_slice_kernel(
    cube_log_density: Callable, dimension: int, n_steps: Optional[int] = None
) -> Callable:
    """Jitted ``kernel(key, points, log_ls, threshold) -> SliceResult``.

    ``n_steps`` defaults to ``2 * dimension`` slice moves per replacement.
    """
    n_steps = 2 * dimension if n_steps is None else int(n_steps)
    if n_steps < 1:
        raise ValueError("need at least one slice step")

    def logl_at(u):
        inside = jnp.all((u > 0.0) & (u < 1.0))
        value = cube_log_density(jnp.clip(u, _EDGE, 1.0 - _EDGE))
        value = jnp.where(jnp.isnan(value), -jnp.inf, value)
        return jnp.where(inside, value, -jnp.inf), inside

    def new_direction(key, x):
        key, sub = jax.random.split(key)
        d = jax.random.normal(sub, (dimension,))
        d = d / jnp.linalg.norm(d)
        lo, hi = _chord(x, d)
        return key, d, lo, hi

    def slice_move(carry):
        x, lx, key, evals, fails, threshold = carry
        key, d, lo, hi = new_direction(key, x)

        def cond(s):
            done, fails_ = s[0], s[7]
            return (~done) & (fails_ < MAX_DIRECTION_FAILURES)

        def body(s):
            _, y_acc, ly_acc, d_, lo_, hi_, key_, fails_, evals_ = s
            key_, sub = jax.random.split(key_)
            t = jax.random.uniform(sub, minval=lo_, maxval=hi_)
            y = x + t * d_
            ly, inside = logl_at(y)
            accept = inside & (ly > threshold)
            lo_n = jnp.where(~accept & (t < 0), t, lo_)
            hi_n = jnp.where(~accept & (t >= 0), t, hi_)
            collapsed = ~accept & (hi_n - lo_n < MIN_BRACKET_WIDTH)
            key_, d2, lo2, hi2 = new_direction(key_, x)
            return (
                accept,
                jnp.where(accept, y, y_acc),
                jnp.where(accept, ly, ly_acc),
                jnp.where(collapsed, d2, d_),
                jnp.where(collapsed, lo2, lo_n),
                jnp.where(collapsed, hi2, hi_n),
                key_,
                fails_ + collapsed.astype(jnp.int32),
                evals_ + inside.astype(jnp.int32),
            )

        init = (jnp.bool_(False), x, lx, d, lo, hi, key, fails, evals)
        done, y, ly, _, _, _, key, fails, evals = jax.lax.while_loop(cond, body, init)
        return y, ly, key, evals, fails, threshold

    @jax.jit
    def kernel(key, points, log_ls, threshold):
        key, sub = jax.random.split(key)
        logits = jnp.where(log_ls > threshold, 0.0, -jnp.inf)
        start = jax.random.categorical(sub, logits)
        carry = (points[start], log_ls[start], key, jnp.int32(0), jnp.int32(0), threshold)
        carry = jax.lax.fori_loop(0, n_steps, lambda _, c: slice_move(c), carry)
        x, lx, _, evals, fails, _ = carry
        return SliceResult(x, lx, evals, fails)

    return kernel


def _as_key(rng) -> jax.Array:
    if isinstance(rng, np.random.Generator):
        return jax.random.PRNGKey(int(rng.integers(2**63 - 1)))
    if isinstance(rng, (int, np.integer)):
        return jax.random.PRNGKey(int(rng))
    return rng


def replace_lowest(live: LivePointSet, threshold: float, model, rng, kernel: Callable | None = None):
    """One draw from the prior restricted to ``log L > threshold``.

    Returns ``(point, log_l, n_evals)``. Pass a prebuilt ``kernel`` (from
    :func:`make_slice_kernel`) when calling repeatedly to avoid recompiling.
    """
    if live.n_live < 2:
        raise ValueError("replacement needs at least two live points")
    if not np.any(live.log_likelihoods > threshold):
        raise NestedSamplerError("no live point lies above the threshold")
    kernel = kernel or make_slice_kernel(model.cube_log_density, model.dimension)
    res = kernel(_as_key(rng), jnp.asarray(live.points), jnp.asarray(live.log_likelihoods), threshold)
    if int(res.n_failures) >= MAX_DIRECTION_FAILURES:
        raise NestedSamplerError(
            f"slice sampler failed on {MAX_DIRECTION_FAILURES} directions above log L* = {threshold:.6g}"
        )
    point, logl = np.asarray(res.point), float(res.log_l)
    assert logl > threshold, "replacement violates the likelihood constraint"
    return point, logl, int(res.n_evals)


def accumulate_evidence(dead: Sequence[DeadPoint], live: LivePointSet, log_v_end: float):
    """Evidence, its error and normalised posterior weights from a finished run.

    The final live points share the remaining volume equally,
    ``V_end / n_live`` each. Returns ``(log_z, log_z_err, weights, information)``
    with weights ordered dead points first, then live points.
    """
    if len(dead) == 0:
        raise ValueError("accumulate_evidence needs at least one dead point")
    dead_logl = np.array([d.log_l for d in dead])
    dead_logw = np.array([d.log_volume_shell for d in dead]) + dead_logl
    live_logw = log_v_end - np.log(live.n_live) + live.log_likelihoods
    log_w = np.concatenate([dead_logw, live_logw])
    log_l = np.concatenate([dead_logl, live.log_likelihoods])
    log_z = float(logsumexp(log_w))
    weights = np.exp(log_w - log_z)
    weights /= weights.sum()
    finite = weights > 0
    information = float(np.sum(weights[finite] * log_l[finite]) - log_z)
    log_z_err = float(np.sqrt(max(information, 0.0) / live.n_live))
    return log_z, log_z_err, weights, information


def _draw_initial(target, n_live, key, batch_logl, max_rounds=100):
    dim = target.dimension
    points = np.empty((n_live, dim))
    logls = np.empty(n_live)
    filled, evals = 0, 0
    for _ in range(max_rounds):
        key, sub = jax.random.split(key)
        cand = np.asarray(jax.random.uniform(sub, (n_live, dim), minval=_EDGE, maxval=1.0))
        vals = np.asarray(batch_logl(jnp.asarray(cand)))
        evals += n_live
        ok = np.isfinite(vals)
        take = min(int(ok.sum()), n_live - filled)
        points[filled : filled + take] = cand[ok][:take]
        logls[filled : filled + take] = vals[ok][:take]
        filled += take
        if filled == n_live:
            return LivePointSet(points, logls), evals
    raise NestedSamplerError("could not draw enough prior points with a finite likelihood")


def _compiled_for(target, n_steps):
    """Jitted kernel and batch helpers, reused across runs on the same target object."""
    entry = _compiled.get(id(target))
    if entry is not None and entry[0] is target and entry[1] == n_steps:
        _compiled.move_to_end(id(target))
        return entry[2:]
    dim = target.dimension
    batch_logl = jax.jit(jax.vmap(lambda u: jnp.nan_to_num(target.cube_log_density(u), nan=-jnp.inf)))
    to_model = jax.jit(jax.vmap(target.cube_to_model))
    kernel = make_slice_kernel(target.cube_log_density, dim, n_steps)
    _compiled[id(target)] = (target, n_steps, kernel, batch_logl, to_model)
    while len(_compiled) > _COMPILED_CACHE_SIZE:
        _compiled.popitem(last=False)
    return kernel, batch_logl, to_model


def run_ns(
    target,
    n_live: int,
    frac_remain: float = DEFAULT_FRAC_REMAIN,
    seed: int = 0,
    *,
    stochastic_shrinkage: bool = False,
    n_steps: Optional[int] = None,
    max_iterations: int = 1_000_000,
) -> NsRunResult:
    """Run nested sampling until the remaining evidence falls below ``frac_remain``.

    Termination: ``max live log L + log V - log Z_acc < log(frac_remain)``,
    or a likelihood plateau where no live point lies above the threshold.
    """
    dim = target.dimension
    if n_live < 2 * dim:
        raise ValueError(f"need at least {2 * dim} live points for {dim} dimensions")
    if not 0 < frac_remain < 1:
        raise ValueError("frac_remain must lie in (0, 1)")

    kernel, batch_logl, to_model = _compiled_for(target, n_steps)

    init_key, loop_key = jax.random.split(jax.random.PRNGKey(seed))
    # compile outside the timed region
    warm = jnp.full((2, dim), 0.5)
    kernel(loop_key, warm, jnp.zeros(2), -jnp.inf).point.block_until_ready()
    batch_logl(jnp.asarray(np.full((n_live, dim), 0.5))).block_until_ready()

    t0 = time.perf_counter()
    live, n_evals = _draw_initial(target, n_live, init_key, batch_logl)
    points, logls = live.points.copy(), live.log_likelihoods.copy()
    shrink_rng = np.random.default_rng(seed) if stochastic_shrinkage else None
    log_frac = np.log(frac_remain)

    dead: list[DeadPoint] = []
    log_v = 0.0
    log_z_acc = -np.inf
    step_log_t = -1.0 / n_live
    stopped_on_plateau = False
    for it in range(max_iterations):
        if np.max(logls) + log_v - log_z_acc < log_frac:
            break
        worst = int(np.argmin(logls))
        threshold = float(logls[worst])
        if not np.any(logls > threshold):
            # plateau: every live point, the removed one included, gets V / n_live
            log_shell = log_v - np.log(n_live)
            dead.append(DeadPoint(points[worst].copy(), threshold, float(log_shell)))
            log_v += np.log1p(-1.0 / n_live)
            points = np.delete(points, worst, axis=0)
            logls = np.delete(logls, worst)
            stopped_on_plateau = True
            break
        log_t = np.log(shrink_rng.beta(n_live, 1)) if stochastic_shrinkage else step_log_t
        log_shell = log_v + np.log1p(-np.exp(log_t))
        dead.append(DeadPoint(points[worst].copy(), threshold, float(log_shell)))
        log_z_acc = np.logaddexp(log_z_acc, log_shell + threshold)
        log_v += log_t
        res = kernel(jax.random.fold_in(loop_key, it), points, logls, threshold)
        n_evals += int(res.n_evals)
        if int(res.n_failures) >= MAX_DIRECTION_FAILURES:
            raise NestedSamplerError(
                f"iteration {it}: slice sampler failed on {MAX_DIRECTION_FAILURES} directions "
                f"above log L* = {threshold:.6g}"
            )
        points[worst] = np.asarray(res.point)
        logls[worst] = float(res.log_l)
    else:
        log.warning("nested sampling hit max_iterations=%d before converging", max_iterations)

    final_live = LivePointSet(points, logls)
    log_z, log_z_err, weights, info = accumulate_evidence(dead, final_live, log_v)
    cube = np.concatenate([np.stack([d.point for d in dead]), points])
    samples = np.asarray(to_model(jnp.asarray(cube)))
    wall = time.perf_counter() - t0
    if stopped_on_plateau:
        log.info("nested sampling stopped on a likelihood plateau after %d iterations", len(dead))
    return NsRunResult(
        log_z=log_z,
        log_z_err=log_z_err,
        samples=samples,
        weights=weights,
        n_likelihood_evals=n_evals,
        n_iterations=len(dead),
        information=info,
        wall_time=wall,
        log_likelihoods=np.concatenate([[d.log_l for d in dead], logls]),
        parameter_names=tuple(getattr(target, "parameter_names", ())),
    )
