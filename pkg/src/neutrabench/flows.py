"""Block neural autoregressive flows (BNAF).

One stack maps ``R^k -> R^k`` through masked layers of widths
``k -> k*h1 -> ... -> k`` with ``tanh`` between layers. Each weight matrix is
split into ``k x k`` blocks: diagonal blocks are exponentiated (positive),
strictly lower blocks are free and upper blocks are zero, so output ``i``
depends on inputs ``<= i`` and increases strictly in input ``i``. Rows are
weight-normalised.

The stack output is mixed with its input through positive per-coordinate
scales, ``y = s * z + c * g(z)``, so ``dy_i/dz_i = s_i + c_i exp(G_i) > 0``
where ``G_i`` is the log-derivative of ``g_i``. Without ``s`` the stack could
only expand. ``G`` is propagated layer by layer in log space
through the diagonal blocks only; the dense Jacobian is never formed.

A fresh flow has ``s = 1``, last-layer rows of norm ``1e-3`` and ``c = 1``;
since ``|tanh| <= 1`` it moves any point by at most ``1e-3 * c * sqrt(k * h_last)``.
Smaller ``residual_init`` values give a tighter identity at the cost of a slow
start in training.
Odd-numbered stacks act on reversed coordinates so that consecutive stacks
condition in opposite orders.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import jax
import jax.numpy as jnp
import numpy as np

FLOW_MAGIC = b"BNAF"
FLOW_VERSION = 1
# last-layer row norm of a fresh flow
INIT_SCALE = 1e-3


@dataclass(frozen=True)
class FlowConfig:
    n_stacks: int = 2
    hidden_dims: tuple[int, ...] = (4, 4)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.n_stacks < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError("need at least one stack and positive hidden block sizes")


def _block_sizes(hidden_dims: Sequence[int]) -> list[tuple[int, int]]:
    sizes = [1, *hidden_dims, 1]
    return list(zip(sizes[:-1], sizes[1:]))


@partial(jax.jit, static_argnums=(0, 1, 2))
def _masks(dim: int, a: int, b: int):
    rows = jnp.repeat(jnp.arange(dim), b)
    cols = jnp.repeat(jnp.arange(dim), a)
    return rows[:, None] == cols[None, :], rows[:, None] > cols[None, :]


def _log_one_minus_tanh_sq(x):
    # log(1 - tanh(x)^2) = 2 (log 2 - x - softplus(-2x))
    return 2.0 * (jnp.log(2.0) - x - jax.nn.softplus(-2.0 * x))


def _layer(layer_params, h, log_g_blocks, dim, a, b, last):
    w_raw, log_g, bias = layer_params
    diag, lower = _masks(dim, a, b)
    w = jnp.where(diag, jnp.exp(w_raw), jnp.where(lower, w_raw, 0.0))
    log_scale = log_g - 0.5 * jnp.log(jnp.sum(w**2, axis=1))
    w = jnp.exp(log_scale)[:, None] * w
    pre = w @ h + bias
    # log of the diagonal blocks, shape (dim, b, a)
    log_wd = (w_raw + log_scale[:, None]).reshape(dim, b, dim, a)
    idx = jnp.arange(dim)
    log_wd = log_wd[idx, :, idx, :]
    log_g_new = jax.scipy.special.logsumexp(log_wd[:, :, :, None] + log_g_blocks[:, None, :, :], axis=2)
    if last:
        return pre, log_g_new
    return jnp.tanh(pre), log_g_new + _log_one_minus_tanh_sq(pre).reshape(dim, b, 1)


def stack_forward(stack_params, z, hidden_dims):
    """One residual BNAF stack: ``(y, per-coordinate log dy_i/dz_i)``."""
    dim = z.shape[0]
    h, log_g = z, jnp.zeros((dim, 1, 1))
    blocks = _block_sizes(hidden_dims)
    for n, ((a, b), lp) in enumerate(zip(blocks, stack_params["layers"])):
        h, log_g = _layer(lp, h, log_g, dim, a, b, last=n == len(blocks) - 1)
    log_s, log_c = stack_params["log_s"], stack_params["log_c"]
    y = jnp.exp(log_s) * z + jnp.exp(log_c) * h
    return y, jnp.logaddexp(log_s, log_c + log_g.reshape(dim))


def flow_apply(flow_params, z, hidden_dims):
    """Compose all stacks; returns ``(y, total log det, per-stack log dets)``."""
    per_stack = []
    x = z
    for s, sp in enumerate(flow_params):
        if s % 2:
            y, ld = stack_forward(sp, x[::-1], hidden_dims)
            x, ld = y[::-1], ld[::-1]
        else:
            x, ld = stack_forward(sp, x, hidden_dims)
        per_stack.append(jnp.sum(ld))
    per_stack = jnp.stack(per_stack)
    return x, jnp.sum(per_stack), per_stack


def init_flow_params(key, dim: int, config: FlowConfig, residual_init: float = 1.0):
    flow_params = []
    for _ in range(config.n_stacks):
        layers = []
        blocks = _block_sizes(config.hidden_dims)
        for n, (a, b) in enumerate(blocks):
            key, sub = jax.random.split(key)
            fan = dim * (a + b)
            limit = np.sqrt(6.0 / fan)
            w_raw = jax.random.uniform(sub, (dim * b, dim * a), minval=-limit, maxval=limit)
            if n == len(blocks) - 1:
                log_g = jnp.full(dim * b, np.log(INIT_SCALE))
            else:
                # start with unit weight normalisation
                diag, lower = _masks(dim, a, b)
                w = jnp.where(diag, jnp.exp(w_raw), jnp.where(lower, w_raw, 0.0))
                log_g = 0.5 * jnp.log(jnp.sum(w**2, axis=1))
            layers.append((w_raw, log_g, jnp.zeros(dim * b)))
        flow_params.append(
            {"layers": layers, "log_s": jnp.zeros(dim), "log_c": jnp.full(dim, np.log(residual_init))}
        )
    return flow_params


@dataclass(frozen=True)
class BnafFlow:
    dimension: int
    config: FlowConfig
    flow_params: list = field(repr=False)

    @classmethod
    def init(
        cls, dimension: int, config: FlowConfig = FlowConfig(), seed: int = 0, residual_init: float = 1.0
    ) -> "BnafFlow":
        if not residual_init > 0:
            raise ValueError("residual_init must be positive")
        flow_params = init_flow_params(jax.random.PRNGKey(seed), dimension, config, residual_init)
        return cls(dimension, config, flow_params)

    @property
    def n_stacks(self) -> int:
        return self.config.n_stacks

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return self.config.hidden_dims

    def with_flow_params(self, flow_params) -> "BnafFlow":
        return BnafFlow(self.dimension, self.config, flow_params)

    def forward(self, z):
        """``(y, log|dy/dz|)``; jax-traceable."""
        y, ld, _ = flow_apply(self.flow_params, z, self.config.hidden_dims)
        return y, ld

    def stack_log_dets(self, z):
        return flow_apply(self.flow_params, z, self.config.hidden_dims)[2]

    def n_parameters(self) -> int:
        return int(sum(np.size(leaf) for leaf in jax.tree_util.tree_leaves(self.flow_params)))


def flow_forward(flow: BnafFlow, z) -> tuple[np.ndarray, float]:
    """Checked entry point: ``z`` must be a finite vector of the flow's dimension."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (flow.dimension,) or not np.all(np.isfinite(z)):
        raise ValueError(f"z must be a finite vector of length {flow.dimension}")
    y, ld = flow.forward(jnp.asarray(z))
    y, ld = np.asarray(y), float(ld)
    if not (np.all(np.isfinite(y)) and np.isfinite(ld)):
        raise FloatingPointError("flow produced a non-finite output")
    return y, ld


# --------------------------------------------------------------------------
# serialisation: magic, version, dims header, then little-endian float64 leaves


def _ordered_leaves(flow_params) -> list[np.ndarray]:
    out = []
    for sp in flow_params:
        for w_raw, log_g, bias in sp["layers"]:
            out += [np.asarray(w_raw), np.asarray(log_g), np.asarray(bias)]
        out += [np.asarray(sp["log_s"]), np.asarray(sp["log_c"])]
    return out


def flow_to_bytes(flow: BnafFlow) -> bytes:
    hidden = flow.config.hidden_dims
    buf = io.BytesIO()
    buf.write(FLOW_MAGIC)
    buf.write(struct.pack("<IIII", FLOW_VERSION, flow.dimension, flow.config.n_stacks, len(hidden)))
    buf.write(struct.pack(f"<{len(hidden)}I", *hidden))
    for leaf in _ordered_leaves(flow.flow_params):
        buf.write(np.ascontiguousarray(leaf, dtype="<f8").tobytes())
    return buf.getvalue()


def flow_from_bytes(data: bytes) -> BnafFlow:
    if data[:4] != FLOW_MAGIC:
        raise ValueError("not a BNAF flow file")
    version, dim, n_stacks, n_hidden = struct.unpack_from("<IIII", data, 4)
    if version != FLOW_VERSION:
        raise ValueError(f"unsupported flow file version {version}")
    offset = 4 + 16
    hidden = struct.unpack_from(f"<{n_hidden}I", data, offset)
    offset += 4 * n_hidden
    config = FlowConfig(n_stacks, tuple(hidden))
    template = init_flow_params(jax.random.PRNGKey(0), dim, config)

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += 8 * n
        return jnp.asarray(arr.astype(np.float64))

    flow_params = []
    for sp in template:
        layers = [tuple(take(np.shape(x)) for x in layer) for layer in sp["layers"]]
        flow_params.append(
            {"layers": layers, "log_s": take(np.shape(sp["log_s"])), "log_c": take(np.shape(sp["log_c"]))}
        )
    if offset != len(data):
        raise ValueError("flow file has trailing or missing bytes")
    return BnafFlow(dim, config, flow_params)


def save_flow(flow: BnafFlow, path) -> None:
    with open(path, "wb") as fh:
        fh.write(flow_to_bytes(flow))


def load_flow(path) -> BnafFlow:
    with open(path, "rb") as fh:
        return flow_from_bytes(fh.read())
