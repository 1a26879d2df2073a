"""Gaussian command policy.

The mean head is a tanh MLP (38 -> 128 -> 128 -> 2 by default, tanh on the
output too) whose output is mapped into command units by the affine
CommandBox transform; the log standard deviations are two free parameters
shared across states, also in command units. Sampling, likelihoods, KL and
curvature all live in the de-normalized command space.

The gradient entry points are exact reverse-mode passes through net.py, and
fisher_vector_product builds the Gauss-Newton Fisher product from one
forward-mode and one reverse-mode pass plus the analytic Gaussian metric
(1/sigma^2 on mean outputs, 2 on the shared log-stds) without ever
materializing the matrix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, PolicyError
from .net import (
    NetParams,
    flatten_net,
    glorot_init,
    net_backward,
    net_forward,
    net_jvp,
    split_flat,
    unflatten_net,
)
from .observation import CommandBox

NET_MAGIC = b"RILNET1\x00"
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class MlpParams:
    """Immutable-by-convention parameter snapshot."""

    net: NetParams
    log_std: np.ndarray
    dropout_rate: float = 0.0

    @property
    def sizes(self) -> tuple:
        return self.net.sizes

    @property
    def n_params(self) -> int:
        return self.net.n_params + self.log_std.size

    def copy(self) -> "MlpParams":
        return MlpParams(self.net.copy(), self.log_std.copy(), self.dropout_rate)


@dataclass
class ActionDistribution:
    mean: np.ndarray
    std: np.ndarray
    log_std: np.ndarray


def init_policy(
    rng: np.random.Generator,
    box: CommandBox,
    obs_dim: int = 38,
    hidden: tuple = (128, 128),
    dropout_rate: float = 0.5,
    std_scale: float = 0.25,
) -> MlpParams:
    """Glorot-uniform weights, zero biases, log-std at log(std_scale * half
    command range) per dimension."""
    sizes = (obs_dim,) + tuple(hidden) + (2,)
    log_std = np.log(std_scale * box.scale)
    return MlpParams(glorot_init(rng, sizes), log_std, dropout_rate)


def make_dropout_mask(rng: np.random.Generator, n: int, width: int, rate: float):
    """Inverted-scale Bernoulli mask; None when the rate is zero."""
    if rate <= 0.0:
        return None
    if not rate < 1.0:
        raise PolicyError(f"dropout rate must be < 1, got {rate}")
    keep = 1.0 - rate
    return (rng.random((n, width)) < keep).astype(np.float64) / keep


def _as_batch(obs: np.ndarray, params: MlpParams) -> tuple[np.ndarray, bool]:
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    if single:
        obs = obs[None, :]
    if obs.ndim != 2 or obs.shape[1] != params.sizes[0]:
        raise PolicyError(
            f"observation shape {obs.shape} does not match input dim {params.sizes[0]}"
        )
    return obs, single


def forward(
    params: MlpParams,
    box: CommandBox,
    obs: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    dropout_mask: np.ndarray | None = None,
) -> ActionDistribution:
    """Evaluate the action distribution at one observation or a batch.

    mode "eval" ignores dropout entirely; mode "train-il" applies the
    between-layer dropout mask (drawn from ``rng`` unless one is supplied).
    """
    x, single = _as_batch(obs, params)
    if mode == "train-il":
        if dropout_mask is None:
            if rng is None and params.dropout_rate > 0.0:
                raise PolicyError("train-il forward needs an rng or an explicit mask")
            dropout_mask = make_dropout_mask(rng, x.shape[0], params.sizes[1], params.dropout_rate)
    elif mode == "eval":
        dropout_mask = None
    else:
        raise PolicyError(f"unknown forward mode {mode!r}")
    y, _ = net_forward(params.net, x, out_tanh=True, dropout_mask=dropout_mask)
    mean = box.offset + box.scale * y
    if not np.all(np.isfinite(mean)):
        raise PolicyError("non-finite activations in policy forward")
    if single:
        mean = mean[0]
    return ActionDistribution(mean=mean, std=np.exp(params.log_std), log_std=params.log_std.copy())


def log_prob(dist: ActionDistribution, actions: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density of (possibly out-of-box) actions."""
    mean = np.atleast_2d(dist.mean)
    a = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    z = (a - mean) / dist.std
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(dist.log_std) - LOG_2PI


def entropy(dist: ActionDistribution) -> float:
    return float(np.sum(dist.log_std) + 0.5 * dist.log_std.size * (1.0 + LOG_2PI))


def kl_mean(
    params_old: MlpParams,
    params_new: MlpParams,
    box: CommandBox,
    obs: np.ndarray,
) -> float:
    """Mean over the batch of KL(old || new), closed form for diagonal
    Gaussians. Exactly zero when both parameter sets coincide."""
    x, _ = _as_batch(obs, params_old)
    mean_old = forward(params_old, box, x).mean
    mean_new = forward(params_new, box, x).mean
    lo, ln = params_old.log_std, params_new.log_std
    var_old, var_new = np.exp(2.0 * lo), np.exp(2.0 * ln)
    per_dim = ln - lo + (var_old + (mean_old - mean_new) ** 2) / (2.0 * var_new) - 0.5
    return float(np.mean(np.sum(per_dim, axis=-1)))


def flat_params(params: MlpParams) -> np.ndarray:
    return np.concatenate([flatten_net(params.net), params.log_std])


def unflatten_params(template: MlpParams, vec: np.ndarray) -> MlpParams:
    vec = np.asarray(vec, dtype=np.float64)
    n_net = template.net.n_params
    if vec.size != n_net + template.log_std.size:
        raise PolicyError(f"flat vector size {vec.size} != {n_net + template.log_std.size}")
    return MlpParams(
        unflatten_net(template.net, vec[:n_net]),
        vec[n_net:].copy(),
        template.dropout_rate,
    )


def grad_scalar(
    params: MlpParams,
    box: CommandBox,
    obs: np.ndarray,
    fn,
    dropout_mask: np.ndarray | None = None,
):
    """Exact gradient of a scalar functional of the distribution parameters.

    ``fn(mean, log_std) -> (value, d_value/d_mean, d_value/d_log_std)`` sees
    the de-normalized mean batch (N, 2) and the shared log-std (2,). Returns
    (value, flat gradient over all network weights, biases and log-stds).
    """
    x, _ = _as_batch(obs, params)
    y, cache = net_forward(params.net, x, out_tanh=True, dropout_mask=dropout_mask)
    mean = box.offset + box.scale * y
    value, dmean, dlog_std = fn(mean, params.log_std)
    gy = np.asarray(dmean, dtype=np.float64) * box.scale
    gws, gbs = net_backward(params.net, cache, gy)
    flat = np.concatenate(
        [np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(gws, gbs)]
        + [np.asarray(dlog_std, dtype=np.float64)]
    )
    return float(value), flat


def fisher_vector_product(
    params: MlpParams,
    box: CommandBox,
    obs: np.ndarray,
    vec: np.ndarray,
    damping: float = 0.0,
) -> np.ndarray:
    """(F + damping I) @ vec for the Fisher of the mean KL over the batch.

    F = J^T M J with J the Jacobian of (mean outputs, log-stds) w.r.t. the
    parameters and M the analytic Gaussian metric: diag(1/sigma^2) per mean
    output averaged over the batch, and 2 per log-std. One JVP pushes the
    tangent to the outputs, the metric rescales it, one VJP pulls it back.
    """
    x, _ = _as_batch(obs, params)
    vec = np.asarray(vec, dtype=np.float64)
    n = x.shape[0]
    tws, tbs, used = split_flat(params.net, vec)
    v_log_std = vec[used:]
    if v_log_std.size != params.log_std.size:
        raise PolicyError("vector length does not match parameter count")

    dy = net_jvp(params.net, x, tws, tbs, out_tanh=True)
    dmean = dy * box.scale
    var = np.exp(2.0 * params.log_std)
    u = dmean / var / n
    _, cache = net_forward(params.net, x, out_tanh=True)
    gws, gbs = net_backward(params.net, cache, u * box.scale)
    g_net = np.concatenate(
        [np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(gws, gbs)]
    )
    out = np.concatenate([g_net, 2.0 * v_log_std])
    if damping:
        out = out + damping * vec
    return out


# -- checkpoint file format ----------------------------------------------


def save_checkpoint(params: MlpParams, path) -> None:
    """Binary little-endian dump: magic, u32 layer count, per-layer u32
    rows/cols, then weights, biases and the log-stds as f64."""
    with open(str(path), "wb") as fh:
        fh.write(NET_MAGIC)
        fh.write(struct.pack("<I", len(params.net.weights)))
        for w in params.net.weights:
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
        for w, b in zip(params.net.weights, params.net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.log_std, dtype="<f8").tobytes())


def load_checkpoint(path, dropout_rate: float = 0.0, expect_sizes: tuple | None = None) -> MlpParams:
    """Read a checkpoint back. ``expect_sizes`` (in, h1, ..., out) guards
    against loading a net of the wrong shape into a configured experiment."""
    try:
        with open(str(path), "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if blob[: len(NET_MAGIC)] != NET_MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    off = len(NET_MAGIC)

    def take(n_bytes: int) -> bytes:
        nonlocal off
        if off + n_bytes > len(blob):
            raise CheckpointError(f"truncated checkpoint {path}")
        out = blob[off : off + n_bytes]
        off += n_bytes
        return out

    (n_layers,) = struct.unpack("<I", take(4))
    if n_layers == 0 or n_layers > 64:
        raise CheckpointError(f"implausible layer count {n_layers} in {path}")
    dims = [struct.unpack("<II", take(8)) for _ in range(n_layers)]
    for (r0, _), (_, c1) in zip(dims[:-1], dims[1:]):
        if r0 != c1:
            raise CheckpointError(f"inconsistent layer sizes {dims} in {path}")
    weights, biases = [], []
    for rows, cols in dims:
        w = np.frombuffer(take(8 * rows * cols), dtype="<f8").reshape(rows, cols)
        b = np.frombuffer(take(8 * rows), dtype="<f8")
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    log_std = np.frombuffer(take(8 * 2), dtype="<f8").astype(np.float64)
    if off != len(blob):
        raise CheckpointError(f"trailing data in {path}")
    params = MlpParams(NetParams(weights, biases), log_std, dropout_rate)
    if expect_sizes is not None and params.sizes != tuple(expect_sizes):
        raise CheckpointError(
            f"checkpoint layer sizes {params.sizes} do not match expected {tuple(expect_sizes)}"
        )
    return params
