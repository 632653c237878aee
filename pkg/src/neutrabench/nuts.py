"""No-U-Turn sampler with multinomial trajectory sampling.

Tree building follows the recursive doubling scheme with the generalised
U-turn criterion, including the two extra checks across the boundary of
merged subtrees. Within a subtree the proposal is drawn uniformly in
proportion to ``exp(-H)``; at the top level new subtrees are accepted with
biased progressive sampling.

Warmup uses dual averaging of the log step size and a windowed estimate of
the diagonal inverse mass matrix: a 75-iteration initial buffer, slow windows
starting at 25 and doubling, and a 200-iteration terminal buffer. Dual
averaging restarts after each slow window. Short warmups fall back to fixed
proportions.

The tree logic runs in Python; each leapfrog step is a single jitted call
that fuses the drift with the density gradient.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import jax
import jax.numpy as jnp
import numpy as np

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0
MAX_ZERO_ACCEPT = 200


class AdaptationError(RuntimeError):
    """Warmup could not find a step size with nonzero acceptance."""


@dataclass(frozen=True)
class NutsConfig:
    target_accept: float = 0.8
    step_size: Optional[float] = None
    max_depth: int = 10
    init_buffer: int = 75
    # longer than the usual 50 so the restarted dual averaging settles before sampling
    term_buffer: int = 200
    base_window: int = 25
    adapt_mass: bool = True

    def __post_init__(self):
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")


@dataclass(frozen=True)
class ChainState:
    position: np.ndarray
    log_density: float
    gradient: np.ndarray
    step_size: float
    inv_mass_diag: np.ndarray

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step size must be positive")
        if np.any(np.asarray(self.inv_mass_diag) <= 0):
            raise ValueError("inverse mass entries must be positive")


@dataclass(frozen=True)
class NutsTransition:
    state: ChainState
    divergent: bool
    tree_depth: int
    accept_stat: float
    n_leapfrog: int


@dataclass(frozen=True)
class NutsRunResult:
    chains: np.ndarray  # (M, N, k) in model space
    unconstrained: np.ndarray  # (M, N, k) sampler coordinates
    divergence_count: np.ndarray  # per chain, sampling phase
    n_gradient_evals: int  # sampling phase
    accept_stat: np.ndarray  # per-chain mean
    step_size: np.ndarray
    inv_mass_diag: np.ndarray
    tree_depth: np.ndarray  # (M, N)
    wall_time: float = 0.0
    warmup_wall_time: float = 0.0
    warmup_gradient_evals: int = 0
    warmup_divergences: int = 0
    failed_chains: tuple = ()
    parameter_names: tuple = ()


# --------------------------------------------------------------------------
# integrator


def leapfrog(state: ChainState, momentum, step_size: float, grad_fn: Callable):
    """One velocity-Verlet step.

    ``grad_fn(q) -> (log_density, gradient)``. Returns
    ``(position, momentum, delta_h, log_density, gradient)`` where
    ``delta_h = H(q', p') - H(q, p)``. A non-finite density or gradient gives
    ``delta_h = inf`` (a divergence).
    """
    if not step_size > 0:
        raise ValueError("step size must be positive")
    inv_mass = np.asarray(state.inv_mass_diag)
    p = np.asarray(momentum, dtype=np.float64)
    p_half = p + 0.5 * step_size * np.asarray(state.gradient)
    q_new = np.asarray(state.position) + step_size * inv_mass * p_half
    logp, grad = grad_fn(q_new)
    grad = np.asarray(grad, dtype=np.float64)
    p_new = p_half + 0.5 * step_size * grad
    h_old = -state.log_density + 0.5 * np.dot(p, inv_mass * p)
    h_new = -logp + 0.5 * np.dot(p_new, inv_mass * p_new)
    finite = np.isfinite(h_new) and np.all(np.isfinite(grad))
    delta_h = float(h_new - h_old) if finite else np.inf
    return q_new, p_new, delta_h, float(logp), grad


def make_fused_leapfrog(log_density: Callable) -> Callable:
    """Jitted ``(q, p, g, eps, inv_mass) -> (q', p', logp', g')``."""
    vg = jax.value_and_grad(log_density)

    @jax.jit
    def step(q, p, g, eps, inv_mass):
        p_half = p + 0.5 * eps * g
        q_new = q + eps * inv_mass * p_half
        lp, g_new = vg(q_new)
        return q_new, p_half + 0.5 * eps * g_new, lp, g_new

    def call(q, p, g, eps, inv_mass):
        q2, p2, lp, g2 = step(q, p, g, eps, inv_mass)
        return np.asarray(q2), np.asarray(p2), float(lp), np.asarray(g2)

    return call


# --------------------------------------------------------------------------
# trajectory building


@dataclass
class _Point:
    q: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray


@dataclass
class _Tree:
    left: _Point
    right: _Point
    p_sharp_left: np.ndarray
    p_sharp_right: np.ndarray
    rho: np.ndarray
    log_w: float
    proposal: _Point
    valid: bool = True
    divergent: bool = False


def _no_u_turn(p_sharp_minus, p_sharp_plus, rho) -> bool:
    return float(np.dot(p_sharp_plus, rho)) > 0 and float(np.dot(p_sharp_minus, rho)) > 0


def _merge_checks(lt: _Tree, rt: _Tree) -> bool:
    """Generalised U-turn check of two adjacent trees in time order."""
    rho = lt.rho + rt.rho
    ok = _no_u_turn(lt.p_sharp_left, rt.p_sharp_right, rho)
    ok = ok and _no_u_turn(lt.p_sharp_left, rt.p_sharp_left, lt.rho + rt.left.p)
    ok = ok and _no_u_turn(lt.p_sharp_right, rt.p_sharp_right, lt.right.p + rt.rho)
    return ok


class NutsKernel:
    """Transition kernel for one target density.

    ``log_density`` must be jax-traceable; it is evaluated in unconstrained
    coordinates.
    """

    def __init__(self, log_density: Callable, max_depth: int = 10):
        self.log_density = log_density
        self.max_depth = int(max_depth)
        self._leapfrog = make_fused_leapfrog(log_density)
        self._vg = jax.jit(jax.value_and_grad(log_density))
        self.n_grad = 0

    def value_and_grad(self, q):
        lp, g = self._vg(jnp.asarray(q, dtype=jnp.float64))
        self.n_grad += 1
        return float(lp), np.asarray(g)

    def init_state(self, q, step_size: float, inv_mass) -> ChainState:
        lp, g = self.value_and_grad(q)
        return ChainState(np.asarray(q, dtype=np.float64), lp, g, step_size, np.asarray(inv_mass, dtype=np.float64))

    # -- leaves -------------------------------------------------------------
    def _leaf(self, start: _Point, direction: int, eps: float, inv_mass, h0: float, stats: dict) -> _Tree:
        q, p, lp, g = self._leapfrog(start.q, start.p, start.grad, direction * eps, inv_mass)
        self.n_grad += 1
        stats["n_leapfrog"] += 1
        h = -lp + 0.5 * float(np.dot(p, inv_mass * p))
        finite = np.isfinite(h) and np.all(np.isfinite(g)) and np.all(np.isfinite(q))
        point = _Point(q, p, lp, g)
        if not finite or h - h0 > DIVERGENCE_THRESHOLD:
            stats["divergent"] = True
            return _Tree(point, point, p, p, p, -np.inf, point, valid=False, divergent=True)
        log_w = h0 - h
        stats["sum_accept"] += float(np.exp(min(log_w, 0.0)))
        sharp = inv_mass * p
        return _Tree(point, point, sharp, sharp, p.copy(), log_w, point)

    def _build(self, start: _Point, direction: int, depth: int, eps, inv_mass, h0, rng, stats) -> _Tree:
        if depth == 0:
            return self._leaf(start, direction, eps, inv_mass, h0, stats)
        first = self._build(start, direction, depth - 1, eps, inv_mass, h0, rng, stats)
        if not first.valid:
            return first
        edge = first.right if direction > 0 else first.left
        second = self._build(edge, direction, depth - 1, eps, inv_mass, h0, rng, stats)
        if not second.valid:
            return second
        log_w = np.logaddexp(first.log_w, second.log_w)
        proposal = first.proposal
        if rng.uniform() < np.exp(second.log_w - log_w):
            proposal = second.proposal
        lt, rt = (first, second) if direction > 0 else (second, first)
        tree = _Tree(lt.left, rt.right, lt.p_sharp_left, rt.p_sharp_right, lt.rho + rt.rho, log_w, proposal)
        tree.valid = _merge_checks(lt, rt)
        return tree

    def step(self, state: ChainState, rng: np.random.Generator) -> NutsTransition:
        inv_mass = state.inv_mass_diag
        eps = state.step_size
        p0 = rng.standard_normal(state.position.shape) / np.sqrt(inv_mass)
        h0 = -state.log_density + 0.5 * float(np.dot(p0, inv_mass * p0))
        start = _Point(state.position, p0, state.log_density, state.gradient)
        sharp0 = inv_mass * p0
        traj = _Tree(start, start, sharp0, sharp0, p0.copy(), 0.0, start)
        stats = {"n_leapfrog": 0, "sum_accept": 0.0, "divergent": False}
        depth = 0
        while depth < self.max_depth:
            direction = 1 if rng.uniform() < 0.5 else -1
            edge = traj.right if direction > 0 else traj.left
            sub = self._build(edge, direction, depth, eps, inv_mass, h0, rng, stats)
            if not sub.valid:
                break
            depth += 1
            proposal = traj.proposal
            if rng.uniform() < np.exp(min(0.0, sub.log_w - traj.log_w)):
                proposal = sub.proposal
            lt, rt = (traj, sub) if direction > 0 else (sub, traj)
            turning = not _merge_checks(lt, rt)
            traj = _Tree(
                lt.left, rt.right, lt.p_sharp_left, rt.p_sharp_right, lt.rho + rt.rho,
                float(np.logaddexp(traj.log_w, sub.log_w)), proposal,
            )
            if turning:
                break
        n_lf = max(stats["n_leapfrog"], 1)
        prop = traj.proposal
        new_state = replace(state, position=prop.q, log_density=prop.logp, gradient=prop.grad)
        return NutsTransition(new_state, stats["divergent"], depth, stats["sum_accept"] / n_lf, stats["n_leapfrog"])


def nuts_step(state: ChainState, rng: np.random.Generator, kernel: NutsKernel) -> NutsTransition:
    return kernel.step(state, rng)


# --------------------------------------------------------------------------
# adaptation


@dataclass
class DualAveraging:
    """Nesterov dual averaging of ``log(step_size)``."""

    target: float
    mu: float
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    counter: int = 0
    s_bar: float = 0.0
    x_bar: float = 0.0

    @classmethod
    def starting_at(cls, step_size: float, target: float) -> "DualAveraging":
        return cls(target=target, mu=float(np.log(10.0 * step_size)))

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - np.sqrt(self.counter) / self.gamma * self.s_bar
        w = self.counter ** (-self.kappa)
        self.x_bar = w * x + (1.0 - w) * self.x_bar
        return float(np.exp(x))

    @property
    def final_step_size(self) -> float:
        return float(np.exp(self.x_bar))


def find_reasonable_step_size(kernel: NutsKernel, state: ChainState, rng: np.random.Generator) -> float:
    """Double or halve the step size until one leapfrog crosses acceptance 0.8."""
    eps = state.step_size
    inv_mass = state.inv_mass_diag
    p0 = rng.standard_normal(state.position.shape) / np.sqrt(inv_mass)

    def delta(eps_):
        _, _, dh, _, _ = leapfrog(replace(state, step_size=eps_), p0, eps_, kernel.value_and_grad)
        return -dh if np.isfinite(dh) else -np.inf

    direction = 1 if delta(eps) > np.log(0.8) else -1
    for _ in range(100):
        eps_next = eps * (2.0 if direction > 0 else 0.5)
        d = delta(eps_next)
        if direction > 0 and not d > np.log(0.8):
            break
        if direction < 0 and d > np.log(0.8):
            eps = eps_next
            break
        eps = eps_next
        if not 1e-10 < eps < 1e7:
            break
    return float(eps)


def adaptation_windows(n_warmup: int, init_buffer=75, term_buffer=200, base_window=25) -> list[tuple[int, int]]:
    """Slow mass-matrix windows as ``(start, end)`` iteration ranges.

    Windows double in length; the last one is stretched to meet the terminal
    buffer. Short warmups fall back to 15% / 75% / 10% proportions.
    """
    if n_warmup < 20:
        return []
    if init_buffer + term_buffer + base_window > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    windows = []
    start, window = init_buffer, base_window
    last = n_warmup - term_buffer
    while start < last:
        end = start + window
        if end + 2 * window > last:
            end = last
        windows.append((start, end))
        start, window = end, 2 * window
    return windows


def _regularised_variance(samples: np.ndarray) -> np.ndarray:
    n = samples.shape[0]
    var = np.var(samples, axis=0, ddof=1)
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def warmup_adapt(
    kernel: NutsKernel,
    state: ChainState,
    n_warmup: int,
    rng: np.random.Generator,
    config: NutsConfig = NutsConfig(),
) -> tuple[ChainState, dict]:
    """Tune step size (unless fixed) and diagonal inverse mass.

    Returns the tuned state and a stats dict. Raises :class:`AdaptationError`
    after ``MAX_ZERO_ACCEPT`` consecutive zero-acceptance iterations.
    """
    fixed = config.step_size is not None
    if not fixed and n_warmup < 100 and n_warmup > 0:
        raise ValueError("adaptive warmup needs at least 100 iterations")
    if fixed:
        state = replace(state, step_size=float(config.step_size))
    else:
        state = replace(state, step_size=find_reasonable_step_size(kernel, state, rng))
    da = DualAveraging.starting_at(state.step_size, config.target_accept)
    windows = adaptation_windows(n_warmup, config.init_buffer, config.term_buffer, config.base_window)
    window_ends = {end for _, end in windows} if config.adapt_mass else set()
    collect_from = windows[0][0] if windows else n_warmup
    buffer: list[np.ndarray] = []
    zero_run = 0
    divergences = 0
    accept_sum = 0.0
    for i in range(n_warmup):
        tr = kernel.step(state, rng)
        state = tr.state
        divergences += tr.divergent
        accept_sum += tr.accept_stat
        zero_run = zero_run + 1 if tr.accept_stat == 0 else 0
        if zero_run >= MAX_ZERO_ACCEPT:
            raise AdaptationError(
                f"acceptance stuck at 0 for {MAX_ZERO_ACCEPT} warmup iterations (eps={state.step_size:.3g})"
            )
        if not fixed:
            state = replace(state, step_size=da.update(tr.accept_stat))
        if window_ends and i >= collect_from:
            buffer.append(state.position)
        if i + 1 in window_ends:
            state = replace(state, inv_mass_diag=_regularised_variance(np.asarray(buffer)))
            buffer = []
            if not fixed:
                state = replace(state, step_size=find_reasonable_step_size(kernel, state, rng))
                da = DualAveraging.starting_at(state.step_size, config.target_accept)
    if not fixed and n_warmup > 0:
        state = replace(state, step_size=da.final_step_size)
    stats = {
        "divergences": int(divergences),
        "mean_accept": accept_sum / max(n_warmup, 1),
    }
    return state, stats


# --------------------------------------------------------------------------
# multi-chain driver


def _initial_state(kernel: NutsKernel, target, rng, attempts: int = 100) -> ChainState:
    dim = target.dimension
    for _ in range(attempts):
        q = np.asarray(target.initial_point(rng), dtype=np.float64)
        lp, g = kernel.value_and_grad(q)
        if np.isfinite(lp) and np.all(np.isfinite(g)):
            return ChainState(q, lp, g, 1.0, np.ones(dim))
    raise AdaptationError("no finite initial point found")


def run_chain(target, n_warmup: int, n_samples: int, config: NutsConfig, seed_seq) -> dict:
    rng = np.random.default_rng(seed_seq)
    kernel = NutsKernel(target.log_density, config.max_depth)
    state = _initial_state(kernel, target, rng)
    kernel.step(state, np.random.default_rng(0))  # compile outside the timers
    kernel.n_grad = 0

    t0 = time.perf_counter()
    state, warm_stats = warmup_adapt(kernel, state, n_warmup, rng, config)
    warm_time = time.perf_counter() - t0
    warm_grads = kernel.n_grad

    kernel.n_grad = 0
    dim = target.dimension
    draws = np.empty((n_samples, dim))
    depths = np.empty(n_samples, dtype=np.int64)
    n_div, acc = 0, 0.0
    t1 = time.perf_counter()
    for i in range(n_samples):
        tr = kernel.step(state, rng)
        state = tr.state
        draws[i] = state.position
        depths[i] = tr.tree_depth
        n_div += tr.divergent
        acc += tr.accept_stat
    return {
        "draws": draws,
        "depths": depths,
        "divergences": n_div,
        "grad_evals": kernel.n_grad,
        "accept": acc / max(n_samples, 1),
        "step_size": state.step_size,
        "inv_mass": state.inv_mass_diag,
        "wall_time": time.perf_counter() - t1,
        "warmup_time": warm_time,
        "warmup_grad_evals": warm_grads,
        "warmup_divergences": warm_stats["divergences"],
    }


def run_nuts(
    target,
    n_chains: int,
    n_warmup: int,
    n_samples: int,
    config: NutsConfig = NutsConfig(),
    seed: int = 0,
) -> NutsRunResult:
    """Run ``n_chains`` independent chains and map the draws to model space.

    Chain seeds are spawned from ``seed``, so each chain's output does not
    depend on the order in which chains run. A chain whose adaptation fails
    is listed in ``failed_chains``; the run raises only if every chain fails.
    """
    if n_chains < 1 or n_warmup < 0 or n_samples < 0:
        raise ValueError("need at least one chain and nonnegative lengths")
    dim = target.dimension
    seeds = np.random.SeedSequence(seed).spawn(n_chains)
    outputs, failed = [], []
    for idx, ss in enumerate(seeds):
        try:
            outputs.append(run_chain(target, n_warmup, n_samples, config, ss))
        except AdaptationError as exc:
            log.error("chain %d failed: %s", idx, exc)
            failed.append((idx, str(exc)))
    if not outputs:
        raise AdaptationError(f"all {n_chains} chains failed: {failed}")

    unconstrained = np.stack([o["draws"] for o in outputs]) if n_samples else np.empty((len(outputs), 0, dim))
    if n_samples:
        constrain = jax.jit(jax.vmap(target.constrain))
        chains = np.asarray(constrain(jnp.asarray(unconstrained.reshape(-1, dim)))).reshape(unconstrained.shape)
    else:
        chains = unconstrained.copy()
    if np.isnan(chains).any():
        raise RuntimeError("NaN in retained samples")
    return NutsRunResult(
        chains=chains,
        unconstrained=unconstrained,
        divergence_count=np.array([o["divergences"] for o in outputs]),
        n_gradient_evals=int(sum(o["grad_evals"] for o in outputs)),
        accept_stat=np.array([o["accept"] for o in outputs]),
        step_size=np.array([o["step_size"] for o in outputs]),
        inv_mass_diag=np.stack([o["inv_mass"] for o in outputs]),
        tree_depth=np.stack([o["depths"] for o in outputs]) if n_samples else np.empty((len(outputs), 0), dtype=np.int64),
        wall_time=float(sum(o["wall_time"] for o in outputs)),
        warmup_wall_time=float(sum(o["warmup_time"] for o in outputs)),
        warmup_gradient_evals=int(sum(o["warmup_grad_evals"] for o in outputs)),
        warmup_divergences=int(sum(o["warmup_divergences"] for o in outputs)),
        failed_chains=tuple(failed),
        parameter_names=tuple(getattr(target, "parameter_names", ())),
    )
