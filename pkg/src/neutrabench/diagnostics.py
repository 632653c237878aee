"""Effective sample sizes, weighted intervals and benchmark metrics.

``mcmc_ess`` is the bulk ESS estimator: chains are split in half, draws are
rank-normalised (z-scale), and the integrated autocorrelation time is
truncated with Geyer's initial positive sequence followed by the initial
monotone correction. ``kish_ess`` is the design-effect ESS for weighted
nested-sampling output.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata


class UndefinedEssError(ValueError):
    """Raised when a chain carries no variance and ESS is undefined."""


def _as_chains(chains) -> np.ndarray:
    arr = np.asarray(chains, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise ValueError("pass one parameter at a time (M x N x 1)")
        arr = arr[..., 0]
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("chains must have shape (M, N)")
    return arr


def _split(chains: np.ndarray) -> np.ndarray:
    n = chains.shape[1] // 2
    if chains.shape[1] % 2:
        chains = chains[:, 1:]
    return np.concatenate([chains[:, :n], chains[:, n:]], axis=0)


def _z_scale(chains: np.ndarray) -> np.ndarray:
    ranks = rankdata(chains, method="average").reshape(chains.shape)
    return ndtri((ranks - 0.375) / (chains.size + 0.25))


def _autocov(chains: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each chain (rows) via FFT."""
    n = chains.shape[1]
    centred = chains - chains.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(centred, n=size, axis=1)
    return np.fft.irfft(spec * np.conj(spec), n=size, axis=1)[:, :n] / n


def _ess_raw(chains: np.ndarray) -> float:
    m, n = chains.shape
    acov = _autocov(chains)
    mean_var = np.mean(acov[:, 0]) * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += np.var(chains.mean(axis=1), ddof=1)
    if not var_plus > 0:
        raise UndefinedEssError("ESS is undefined for constant chains")

    rho = np.zeros(n)
    rho_even, rho_odd = 1.0, 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[0], rho[1] = rho_even, rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1], rho[t + 2] = rho_even, rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    # initial monotone sequence: pair sums may not increase
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = 0.5 * (rho[t - 1] + rho[t])
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * np.sum(rho[: max_t + 1]) + np.sum(rho[max_t + 1 : max_t + 2])
    tau = max(tau, 1.0 / math.log10(total))
    return float(total / tau)


def mcmc_ess(chains) -> float:
    """Rank-normalised split-chain bulk ESS for one parameter.

    ``chains`` has shape ``(M, N)`` or ``(M, N, 1)``.
    """
    arr = _as_chains(chains)
    if arr.shape[1] < 4:
        raise ValueError("need at least 4 draws per chain")
    if not np.all(np.isfinite(arr)):
        raise ValueError("chains contain non-finite values")
    if np.ptp(arr) == 0:
        raise UndefinedEssError("ESS is undefined for constant chains")
    return _ess_raw(_z_scale(_split(arr)))


def min_ess(chains) -> float:
    """Minimum bulk ESS over the parameters of an ``(M, N, k)`` array."""
    arr = np.asarray(chains, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError("chains must have shape (M, N, k)")
    return min(mcmc_ess(arr[:, :, j]) for j in range(arr.shape[2]))


def split_rhat(chains) -> float:
    """Rank-normalised split R-hat for one parameter."""
    arr = _z_scale(_split(_as_chains(chains)))
    m, n = arr.shape
    within = np.mean(np.var(arr, axis=1, ddof=1))
    between = n * np.var(arr.mean(axis=1), ddof=1)
    var_hat = (n - 1) / n * within + between / n
    return float(np.sqrt(var_hat / within))


def kish_ess(weights) -> float:
    """Kish ESS ``N / D_eff`` with ``D_eff = 1 + sum((N w_i - 1)^2) / N``."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0 or np.any(w < 0) or not np.isfinite(w).all():
        raise ValueError("weights must be nonnegative and finite")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must be normalised (sum is {w.sum()!r})")
    n = w.size
    d_eff = 1.0 + np.sum((n * w - 1.0) ** 2) / n
    return float(n / d_eff)


@dataclass(frozen=True)
class WeightedSampleSet:
    samples: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if s.ndim != 2 or w.shape != (s.shape[0],):
            raise ValueError("need one weight per sample row")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "weights", w)

    @classmethod
    def unweighted(cls, samples) -> "WeightedSampleSet":
        s = np.asarray(samples, dtype=np.float64)
        if s.ndim == 3:
            s = s.reshape(-1, s.shape[-1])
        n = s.shape[0]
        return cls(s, np.full(n, 1.0 / n))

    def mean(self) -> np.ndarray:
        return self.weights @ self.samples


def weighted_quantile(values, weights, q) -> np.ndarray:
    """Quantiles by linear interpolation on the midpoint weighted CDF."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    x, w = values[order], weights[order]
    cdf = np.cumsum(w) - 0.5 * w
    cdf /= w.sum()
    return np.interp(q, cdf, x)


def equal_tailed_interval(samples: WeightedSampleSet, index: int, mass: float) -> tuple[float, float]:
    """Weighted equal-tailed ``mass`` interval for parameter ``index``."""
    if not 0 < mass < 1:
        raise ValueError("mass must lie in (0, 1)")
    col = samples.samples[:, index]
    if np.unique(col[samples.weights > 0]).size < 2:
        raise ValueError("need at least two distinct samples")
    tail = 0.5 * (1.0 - mass)
    lo, hi = weighted_quantile(col, samples.weights, [tail, 1.0 - tail])
    return float(lo), float(hi)


@dataclass(frozen=True)
class RunMetrics:
    method: str
    ess: float
    n_evals: int
    wall_time: float
    wall_time_per_ess: float
    evals_per_ess: float
    n_divergences: Optional[int] = None
    divergences_per_ess: Optional[float] = None

    def __post_init__(self):
        if not self.ess > 0:
            raise ValueError("ESS must be positive")
        if min(self.n_evals, self.wall_time) < 0:
            raise ValueError("counts and times must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["wall_time_s"] = d.pop("wall_time")
        return d


def assemble_metrics(result, wall_time: float, ess: float, method: str | None = None) -> RunMetrics:
    """Per-ESS ratios for a sampler result.

    Nested-sampling results (``n_likelihood_evals``) carry no divergence
    fields; NUTS results (``n_gradient_evals`` and ``divergence_count``) do.
    """
    if hasattr(result, "n_gradient_evals"):
        n_evals = int(result.n_gradient_evals)
        n_div = int(np.sum(result.divergence_count))
        div_per = n_div / ess
        label = method or "nuts"
    else:
        n_evals = int(result.n_likelihood_evals)
        n_div = div_per = None
        label = method or "ns"
    return RunMetrics(
        method=label,
        ess=float(ess),
        n_evals=n_evals,
        wall_time=float(wall_time),
        wall_time_per_ess=wall_time / ess,
        evals_per_ess=n_evals / ess,
        n_divergences=n_div,
        divergences_per_ess=div_per,
    )
