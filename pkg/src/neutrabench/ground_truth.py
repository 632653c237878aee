"""Quadrature ground truth for the Gaussian-fit model.

Each mean ``mu_i`` enters the integrand as ``exp(-(a mu^2 + b mu + c))`` and is
integrated in closed form. What remains is a trapezoid rule over the
log-variances ``C_i`` on ``[-50, 50]``. Everything is accumulated in log space.

Convention: the likelihood uses ``exp(C_i)`` as the variance of ``x_ij``, so
the quadratic coefficients carry ``exp(-C_i)`` and the ``mu``-free prefactor
is ``exp(-n C_i / 2)``. The brute-force integrator at the bottom of this
module integrates the very same log density without any reduction and is
used to cross-check the analytic path.

Because the model factorises over groups, the tensor-product trapezoid over
``(C_1, ..., C_k)`` equals the product of the per-group 1-D trapezoid sums;
:func:`log_evidence_oracle` evaluates it that way, which is exact and costs
``O(k N)`` instead of ``O(N^k)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from neutrabench.models.densities import LOG_2PI
from neutrabench.models.gaussian_fit import GaussianFitModel

log = logging.getLogger(__name__)

CONVERGENCE_TOL = 0.01
CONTOUR_MASS_TOL = 1e-3
DEFAULT_TRACE = (3, 5, 10, 15, 20, 25, 30, 40, 50, 60, 70, 80, 100, 120, 151, 181, 211, 241)


@dataclass(frozen=True)
class QuadratureGrid:
    lo: float = -50.0
    hi: float = 50.0
    points_per_dim: int = 151

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("grid needs lo < hi")
        if self.points_per_dim < 2:
            raise ValueError("trapezoid rule needs at least two points")

    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.points_per_dim)

    def log_weights(self) -> np.ndarray:
        h = (self.hi - self.lo) / (self.points_per_dim - 1)
        w = np.full(self.points_per_dim, h)
        w[[0, -1]] = 0.5 * h
        return np.log(w)

    def refined(self) -> "QuadratureGrid":
        """Same domain with the spacing halved."""
        return QuadratureGrid(self.lo, self.hi, 2 * self.points_per_dim - 1)


@dataclass(frozen=True)
class EvidenceOracleResult:
    log_z: float
    grid: QuadratureGrid
    trace: list[tuple[int, float]] = field(default_factory=list)
    converged: bool = True
    refinement_delta: float = 0.0

    def knee(self, tol: float = CONVERGENCE_TOL) -> int | None:
        """Smallest trace size from which every later value stays within ``tol`` of the last."""
        if not self.trace:
            return None
        final = self.trace[-1][1]
        knee = None
        for n, value in reversed(self.trace):
            if abs(value - final) < tol:
                knee = n
            else:
                break
        return knee


def mu_marginal_coefficients(c, y, prior_variance: float = 10.0):
    """Coefficients ``(a, b, c)`` of the ``mu`` exponent for one group.

    ``a = (1/s2 + n e^-C) / 2``, ``b = -e^-C sum(y)``,
    ``c = (C^2/s2 + e^-C sum(y^2)) / 2``.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    c = np.asarray(c, dtype=np.float64)
    n = y.size
    inv_var = np.exp(-c)
    a = 0.5 * (1.0 / prior_variance + n * inv_var)
    b = -inv_var * np.sum(y)
    cc = 0.5 * (c**2 / prior_variance + inv_var * np.sum(y**2))
    return a, b, cc


def mu_gaussian_integral(a, b, c):
    """``integral exp(-(a mu^2 + b mu + c)) dmu = sqrt(pi/a) exp((b^2 - 4ac) / 4a)``."""
    a = np.asarray(a, dtype=np.float64)
    if np.any(a <= 0):
        raise ValueError("the mu exponent must open upwards (a > 0)")
    return np.sqrt(np.pi / a) * np.exp((b**2 - 4.0 * a * c) / (4.0 * a))


def log_mu_integral(c, y, prior_variance: float = 10.0) -> np.ndarray:
    """``log`` of :func:`mu_gaussian_integral` for the group coefficients, cancellation-free.

    The exponent ``b^2/4a - c`` is rewritten as
    ``-C^2/(2 s2) - e^-C/2 * (S2 - S1^2 / (n + e^C/s2))``.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    c = np.asarray(c, dtype=np.float64)
    n = y.size
    s1, s2 = np.sum(y), np.sum(y**2)
    log_two_a = np.logaddexp(-np.log(prior_variance), np.log(n) - c) if n else np.full_like(c, -np.log(prior_variance))
    spread = s2 - s1**2 / (n + np.exp(c) / prior_variance) if n else 0.0
    exponent = -0.5 * c**2 / prior_variance - 0.5 * np.exp(-c) * spread
    return 0.5 * (np.log(2.0 * np.pi) - log_two_a) + exponent


def _log_group_c_integrand(c, y, prior_variance):
    """log of the per-group integrand over ``C`` after integrating ``mu`` out."""
    n = np.asarray(y).size
    const = -0.5 * n * LOG_2PI - np.log(2.0 * np.pi * prior_variance)
    return const - 0.5 * n * np.asarray(c) + log_mu_integral(c, y, prior_variance)


def _log_trapezoid_1d(log_f: np.ndarray, grid: QuadratureGrid, axis: int = -1) -> np.ndarray:
    shape = [1] * log_f.ndim
    shape[axis] = -1
    return logsumexp(log_f + grid.log_weights().reshape(shape), axis=axis)


def _log_evidence_at(model: GaussianFitModel, grid: QuadratureGrid) -> float:
    nodes = grid.nodes()
    total = 0.0
    for row in model.data:
        total += float(_log_trapezoid_1d(_log_group_c_integrand(nodes, row, model.prior_variance), grid))
    return total


def log_evidence_oracle(
    model: GaussianFitModel,
    grid: QuadratureGrid = QuadratureGrid(),
    trace_points: Sequence[int] = DEFAULT_TRACE,
    tol: float = CONVERGENCE_TOL,
) -> EvidenceOracleResult:
    """Evidence by analytic ``mu`` integration and trapezoid quadrature over ``C``.

    The convergence flag compares the requested grid with one of half the
    spacing; the trace evaluates the same domain at each size in
    ``trace_points`` (plus the requested size) for convergence plots.
    """
    log_z = _log_evidence_at(model, grid)
    finer = _log_evidence_at(model, grid.refined())
    delta = abs(finer - log_z)
    converged = bool(delta < tol)
    if not converged:
        log.warning(
            "evidence quadrature not converged at %d points/dim: |dlogZ| = %.3g",
            grid.points_per_dim,
            delta,
        )
    sizes = sorted(set(int(n) for n in trace_points if n >= 2) | {grid.points_per_dim})
    trace = [(n, _log_evidence_at(model, QuadratureGrid(grid.lo, grid.hi, n))) for n in sizes]
    return EvidenceOracleResult(log_z, grid, trace, converged, delta)


def brute_force_log_evidence(
    model: GaussianFitModel, mu_grid: QuadratureGrid, c_grid: QuadratureGrid, chunk: int = 256
) -> float:
    """Full ``2k``-dimensional trapezoid over every ``mu_i`` and ``C_i``; no reduction.

    Cost is ``O(N_mu^k N_C^k)``, so this is only for ``k = 1`` (or tiny grids).
    """
    k = model.k_groups
    mu_nodes, c_nodes = mu_grid.nodes(), c_grid.nodes()
    axes = [mu_nodes] * k + [c_nodes] * k
    log_w = [mu_grid.log_weights()] * k + [c_grid.log_weights()] * k
    mesh_shape = tuple(len(a) for a in axes)
    flat_n = int(np.prod(mesh_shape))
    acc = []
    for start in range(0, flat_n, chunk * 1024):
        idx = np.unravel_index(np.arange(start, min(flat_n, start + chunk * 1024)), mesh_shape)
        theta = np.stack([axes[d][idx[d]] for d in range(2 * k)], axis=-1)
        lw = sum(log_w[d][idx[d]] for d in range(2 * k))
        acc.append(logsumexp(_log_joint_numpy(model, theta) + lw))
    return float(logsumexp(acc))


def _log_joint_numpy(model: GaussianFitModel, theta: np.ndarray) -> np.ndarray:
    """Vectorised log prior + log likelihood, ``theta`` of shape ``(..., 2k)``."""
    k, n, s2 = model.k_groups, model.n_obs, model.prior_variance
    mu, c = theta[..., :k], theta[..., k:]
    log_prior = np.sum(-np.log(2 * np.pi * s2) - 0.5 * (mu**2 + c**2) / s2, axis=-1)
    sq = np.sum((model.data[None] - mu[..., None]) ** 2, axis=-1) if n else 0.0
    log_like = np.sum(-0.5 * n * LOG_2PI - 0.5 * n * c - 0.5 * np.exp(-c) * sq, axis=-1)
    return log_prior + log_like


# --------------------------------------------------------------------------
# marginals


def _split_index(model: GaussianFitModel, index: int) -> tuple[int, str]:
    k = model.k_groups
    if not 0 <= index < 2 * k:
        raise IndexError(f"parameter index {index} out of range for {2 * k} parameters")
    return (index, "mu") if index < k else (index - k, "C")


def _log_group_factor(model, group, mu=None, c=None, inner: QuadratureGrid = QuadratureGrid(-50, 50, 2001)):
    """log of the group's prior x likelihood with ``mu`` and/or ``C`` held fixed.

    Free coordinates are integrated out (``mu`` analytically, ``C`` by
    trapezoid on ``inner``). Fixed coordinates are arrays that broadcast.
    """
    y = model.data[group]
    n, s2 = y.size, model.prior_variance
    if mu is None and c is None:
        return _log_trapezoid_1d(_log_group_c_integrand(inner.nodes(), y, s2), inner)
    if mu is None:
        return _log_group_c_integrand(np.asarray(c, dtype=np.float64), y, s2)

    def direct(mu_v, c_v):
        sq = np.sum((y - mu_v[..., None]) ** 2, axis=-1) if n else 0.0
        return (
            -np.log(2 * np.pi * s2)
            - 0.5 * (mu_v**2 + c_v**2) / s2
            - 0.5 * n * LOG_2PI
            - 0.5 * n * c_v
            - 0.5 * np.exp(-c_v) * sq
        )

    mu = np.asarray(mu, dtype=np.float64)
    if c is not None:
        mu, c = np.broadcast_arrays(mu, np.asarray(c, dtype=np.float64))
        return direct(mu, c)
    nodes = inner.nodes()
    vals = direct(mu[..., None], nodes)
    return _log_trapezoid_1d(vals, inner)


def log_marginal_1d(model: GaussianFitModel, index: int, values, inner: QuadratureGrid | None = None):
    """Unnormalised log marginal of one parameter at ``values``."""
    group, kind = _split_index(model, index)
    inner = inner or QuadratureGrid(-50, 50, 2001)
    values = np.asarray(values, dtype=np.float64)
    if kind == "mu":
        return _log_group_factor(model, group, mu=values, inner=inner)
    return _log_group_factor(model, group, c=values, inner=inner)


def oracle_interval(
    model: GaussianFitModel,
    index: int,
    mass: float = 0.68,
    nodes: np.ndarray | None = None,
) -> tuple[float, float]:
    """Equal-tailed interval of the exact 1-D marginal (trapezoid CDF, linear interpolation)."""
    if not 0 < mass < 1:
        raise ValueError("mass must lie in (0, 1)")
    if nodes is None:
        nodes = np.linspace(-50, 50, 20001)
    logp = log_marginal_1d(model, index, nodes)
    p = np.exp(logp - logp.max())
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(nodes))])
    cdf /= cdf[-1]
    tail = 0.5 * (1.0 - mass)
    lo, hi = np.interp([tail, 1.0 - tail], cdf, nodes)
    return float(lo), float(hi)


@dataclass(frozen=True)
class ContourResult:
    u_index: int
    v_index: int
    u_nodes: np.ndarray
    v_nodes: np.ndarray
    log_field: np.ndarray
    log_levels: dict
    masses: dict

    @property
    def field(self) -> np.ndarray:
        return np.exp(self.log_field)

    def level(self, rho: float) -> float:
        """Contour value in units of the (unnormalised) field."""
        return float(np.exp(self.log_levels[rho]))


def log_marginal_2d(model: GaussianFitModel, u: int, v: int, u_values, v_values, inner=None):
    """Unnormalised log marginal of parameters ``u`` and ``v`` at paired points.

    All other parameters are integrated out by the same reduction used for
    the evidence.
    """
    if u == v:
        raise ValueError("contour needs two distinct parameters")
    inner = inner or QuadratureGrid(-50, 50, 2001)
    u_values, v_values = np.broadcast_arrays(
        np.asarray(u_values, dtype=np.float64), np.asarray(v_values, dtype=np.float64)
    )
    fixed: dict[int, dict] = {}
    for idx, vals in ((u, u_values), (v, v_values)):
        group, kind = _split_index(model, idx)
        fixed.setdefault(group, {})["mu" if kind == "mu" else "c"] = vals
    total = np.zeros(u_values.shape)
    for group in range(model.k_groups):
        kw = fixed.get(group, {})
        total = total + _log_group_factor(model, group, mu=kw.get("mu"), c=kw.get("c"), inner=inner)
    return total


def contour_level(log_field: np.ndarray, log_cell_weights: np.ndarray, rho: float, tol: float = CONTOUR_MASS_TOL):
    """Level ``s`` such that the region ``F > s`` carries a fraction ``rho`` of the mass.

    Bisection on ``log s``. Returns ``(log_level, achieved_mass)``. Raises
    ``RuntimeError`` if the target cannot be bracketed.
    """
    if not 0 < rho <= 1:
        raise ValueError("rho must be in (0, 1]")
    if rho == 1.0:
        return -np.inf, 1.0
    lw = log_field + log_cell_weights
    log_total = logsumexp(lw)
    frac_w = np.exp(lw - log_total).ravel()
    flat = log_field.ravel()
    order = np.argsort(flat)[::-1]
    cum = np.cumsum(frac_w[order])

    def mass_above(log_s):
        return float(np.sum(frac_w[flat > log_s]))

    lo, hi = float(flat.min()) - 1.0, float(flat.max())
    if not (mass_above(lo) >= rho >= mass_above(hi)):
        raise RuntimeError(f"cannot bracket the {rho:.0%} contour level")
    mid, mass = lo, mass_above(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        mass = mass_above(mid)
        if abs(mass - rho) < tol:
            break
        if mass > rho:
            lo = mid
        else:
            hi = mid
    else:
        # discrete grid: report the nearest achievable level
        j = int(np.searchsorted(cum, rho))
        mid = float(flat[order[min(j, flat.size - 1)]]) - 1e-12
        mass = mass_above(mid)
        log.warning("contour bisection stalled at mass %.4f for target %.3f", mass, rho)
    return mid, mass


def marginal_contour(
    model: GaussianFitModel,
    u: int,
    v: int,
    u_grid: QuadratureGrid,
    v_grid: QuadratureGrid,
    levels: Sequence[float] = (0.68, 0.95),
    inner: QuadratureGrid | None = None,
) -> ContourResult:
    """2-D marginal field on a grid plus the super-level contour values for ``levels``."""
    un, vn = u_grid.nodes(), v_grid.nodes()
    uu, vv = np.meshgrid(un, vn, indexing="ij")
    log_field = log_marginal_2d(model, u, v, uu, vv, inner=inner)
    log_cells = u_grid.log_weights()[:, None] + v_grid.log_weights()[None, :]
    log_levels, masses = {}, {}
    for rho in levels:
        log_levels[rho], masses[rho] = contour_level(log_field, log_cells, rho)
    return ContourResult(u, v, un, vn, log_field, log_levels, masses)


def super_level_mass(contour: ContourResult, rho: float, u_grid: QuadratureGrid, v_grid: QuadratureGrid) -> float:
    """Re-integrate the field above the ``rho`` level (self-consistency check)."""
    log_cells = u_grid.log_weights()[:, None] + v_grid.log_weights()[None, :]
    lw = contour.log_field + log_cells
    inside = contour.log_field > contour.log_levels[rho]
    return float(np.exp(logsumexp(lw[inside]) - logsumexp(lw))) if inside.any() else 0.0
