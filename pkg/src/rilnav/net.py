"""Small dense-network core with handwritten forward, reverse-mode and
forward-mode passes.

This is deliberately not a general autodiff system: the architecture is a
fixed stack of linear layers with tanh hidden units, an optional tanh on the
output, and an optional dropout mask between the first and second layer. All
math is float64. The same core backs the policy mean network and the value
networks, so gradient checks exercise one implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class NetParams:
    """Layer weights (out x in) and biases, in declaration order."""

    weights: list
    biases: list

    @property
    def sizes(self) -> tuple:
        return tuple([self.weights[0].shape[1]] + [w.shape[0] for w in self.weights])

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "NetParams":
        return NetParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def glorot_init(rng: np.random.Generator, sizes) -> NetParams:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetParams(weights, biases)


def net_forward(params: NetParams, x: np.ndarray, out_tanh: bool, dropout_mask=None):
    """Run the net on a (N, in) batch. Returns (y, cache) where cache carries
    everything net_backward needs. ``dropout_mask`` is a ready-scaled (N, h1)
    array (inverted dropout: entries are 0 or 1/(1-rate))."""
    n_layers = len(params.weights)
    inputs = []
    acts = []
    a = x
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w.T + b
        if l == n_layers - 1 and not out_tanh:
            out = z
        else:
            out = np.tanh(z)
        acts.append(out)
        if l == 0 and dropout_mask is not None:
            a = out * dropout_mask
        else:
            a = out
    cache = (inputs, acts, dropout_mask, out_tanh)
    return a, cache


def net_backward(params: NetParams, cache, gy: np.ndarray):
    """Reverse pass: gradient of sum(gy * y) w.r.t. every weight and bias."""
    inputs, acts, dropout_mask, out_tanh = cache
    n_layers = len(params.weights)
    gws = [None] * n_layers
    gbs = [None] * n_layers
    g = gy
    for l in range(n_layers - 1, -1, -1):
        if l == 0 and dropout_mask is not None:
            g = g * dropout_mask
        if l == n_layers - 1 and not out_tanh:
            dz = g
        else:
            dz = g * (1.0 - acts[l] ** 2)
        gws[l] = dz.T @ inputs[l]
        gbs[l] = dz.sum(axis=0)
        if l > 0:
            g = dz @ params.weights[l]
    return gws, gbs


def net_jvp(params: NetParams, x: np.ndarray, tws, tbs, out_tanh: bool) -> np.ndarray:
    """Forward-mode pass: directional derivative of the output along the
    parameter tangent (tws, tbs), evaluated without dropout."""
    n_layers = len(params.weights)
    a = x
    da = np.zeros_like(x)
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        dz = a @ tws[l].T + da @ w.T + tbs[l]
        if l == n_layers - 1 and not out_tanh:
            a, da = z, dz
        else:
            t = np.tanh(z)
            a, da = t, (1.0 - t**2) * dz
    return da


def flatten_net(params: NetParams) -> np.ndarray:
    chunks = []
    for w, b in zip(params.weights, params.biases):
        chunks.append(w.ravel())
        chunks.append(b.ravel())
    return np.concatenate(chunks)


def unflatten_net(template: NetParams, vec: np.ndarray) -> NetParams:
    weights, biases = [], []
    i = 0
    for w, b in zip(template.weights, template.biases):
        weights.append(vec[i : i + w.size].reshape(w.shape).copy())
        i += w.size
        biases.append(vec[i : i + b.size].copy())
        i += b.size
    if i != vec.size:
        raise ValueError(f"flat vector has {vec.size} entries, expected {i}")
    return NetParams(weights, biases)


def split_flat(template: NetParams, vec: np.ndarray):
    """View a flat vector as per-layer (tws, tbs) without copying shapes."""
    tws, tbs = [], []
    i = 0
    for w, b in zip(template.weights, template.biases):
        tws.append(vec[i : i + w.size].reshape(w.shape))
        i += w.size
        tbs.append(vec[i : i + b.size])
        i += b.size
    return tws, tbs, i
