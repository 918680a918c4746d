"""Continuous-convolution layer over a fixed neighbour graph.

Efficient form used everywhere:

    h_i = s_i * sum_j w(u_i - v_j) * (W^T f_j) + R^T f_i

with w a two-layer kernel MLP evaluated on the offset, s_i = 1/K_i (or 1 for
the literal unnormalised sum) and * the per-channel product.  Batch norm and
ReLU follow.  Gradients are written out by hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class NeighborGraph:
    """Flat edge list (target i, neighbour j) with per-edge offset u_i - v_j.

    Built once per forward pass and shared by all layers.
    """

    rows: np.ndarray
    cols: np.ndarray
    offsets: np.ndarray
    num_points: int
    normalize: bool = True

    def __post_init__(self):
        n = self.num_points
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        if len(self.rows) and np.any(np.diff(self.rows) < 0):
            order = np.argsort(self.rows, kind="stable")
            self.rows, self.cols, self.offsets = self.rows[order], self.cols[order], self.offsets[order]
        self.offsets = np.ascontiguousarray(self.offsets)
        self.counts = np.bincount(self.rows, minlength=n).astype(np.int64)
        self.ptr = np.concatenate([[0], np.cumsum(self.counts)]).astype(np.int64)
        with np.errstate(divide="ignore"):
            self.row_scale = np.where(self.counts > 0, 1.0 / np.maximum(self.counts, 1), 0.0) if self.normalize else np.ones(n)

    @property
    def num_edges(self) -> int:
        return len(self.rows)

    @classmethod
    def from_neighbors(cls, positions: np.ndarray, neighbors: np.ndarray, normalize: bool = True) -> NeighborGraph:
        """`neighbors` is (N, K) with -1 marking absent entries (so K_i may vary)."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        neighbors = np.asarray(neighbors, dtype=np.int64).reshape(len(positions), -1)
        rows, k = np.nonzero(neighbors >= 0)
        cols = neighbors[rows, k]
        if len(cols) and cols.max() >= len(positions):
            raise ValueError("neighbour index out of range")
        return cls(rows, cols, positions[rows] - positions[cols], len(positions), normalize)


def relu(x):
    return np.maximum(x, 0.0)


def init_layer(rng: np.random.Generator, f_in: int, f_out: int, hidden: int = 16, scalar_kernel: bool = False, bn: bool = True) -> dict:
    """Uniform fan-in initialisation; residual projection is the identity when square."""

    def uni(fan_in, shape):
        b = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-b, b, size=shape)

    k_out = 1 if scalar_kernel else f_out
    p = {
        "A1": uni(3, (3, hidden)),
        "b1": uni(3, (hidden,)),
        "A2": uni(hidden, (hidden, k_out)),
        "b2": uni(hidden, (k_out,)),
        "W": uni(f_in, (f_in, f_out)),
        "R": np.eye(f_in) if f_in == f_out else uni(f_in, (f_in, f_out)),
    }
    if bn:
        p["gamma"] = np.ones(f_out)
        p["beta"] = np.zeros(f_out)
    return p


def kernel_weights(p: dict, offsets: np.ndarray):
    """(z, a, w): pre-activation, hidden activation and kernel output per edge."""
    z = offsets @ p["A1"] + p["b1"]
    a = relu(z)
    return z, a, a @ p["A2"] + p["b2"]


@njit(cache=True, fastmath=True)
def _edge_forward(ptr, cols, offsets, scale, A1, b1, A2, b2, g, out):
    o = g.shape[1]
    hdim, ko = A1.shape[1], A2.shape[1]
    a = np.empty(hdim)
    w = np.empty(ko)
    acc = np.empty(o)
    for i in range(out.shape[0]):
        acc[:] = 0.0
        for e in range(ptr[i], ptr[i + 1]):
            for h in range(hdim):
                v = b1[h] + offsets[e, 0] * A1[0, h] + offsets[e, 1] * A1[1, h] + offsets[e, 2] * A1[2, h]
                a[h] = v if v > 0.0 else 0.0
            for k in range(ko):
                w[k] = b2[k]
            for h in range(hdim):
                ah = a[h]
                if ah != 0.0:
                    for k in range(ko):
                        w[k] += ah * A2[h, k]
            j = cols[e]
            if ko == o:
                for k in range(o):
                    acc[k] += w[k] * g[j, k]
            else:
                for k in range(o):
                    acc[k] += w[0] * g[j, k]
        for k in range(o):
            out[i, k] = acc[k] * scale[i]


@njit(cache=True, fastmath=True)
def _edge_backward(ptr, cols, offsets, scale, A1, b1, A2, b2, g, dh, dg, dA1, db1, dA2, db2):
    o = g.shape[1]
    hdim, ko = A1.shape[1], A2.shape[1]
    z = np.empty(hdim)
    a = np.empty(hdim)
    w = np.empty(ko)
    dw = np.empty(ko)
    dm = np.empty(o)
    for i in range(dh.shape[0]):
        for k in range(o):
            dm[k] = scale[i] * dh[i, k]
        for e in range(ptr[i], ptr[i + 1]):
            for h in range(hdim):
                z[h] = b1[h] + offsets[e, 0] * A1[0, h] + offsets[e, 1] * A1[1, h] + offsets[e, 2] * A1[2, h]
                a[h] = z[h] if z[h] > 0.0 else 0.0
            for k in range(ko):
                w[k] = b2[k]
            for h in range(hdim):
                ah = a[h]
                if ah != 0.0:
                    for k in range(ko):
                        w[k] += ah * A2[h, k]
            j = cols[e]
            if ko == o:
                for k in range(o):
                    dw[k] = dm[k] * g[j, k]
                    dg[j, k] += dm[k] * w[k]
            else:
                s = 0.0
                for k in range(o):
                    s += dm[k] * g[j, k]
                    dg[j, k] += dm[k] * w[0]
                dw[0] = s
            for k in range(ko):
                db2[k] += dw[k]
            for h in range(hdim):
                if z[h] > 0.0:
                    da = 0.0
                    for k in range(ko):
                        dA2[h, k] += a[h] * dw[k]
                        da += dw[k] * A2[h, k]
                    db1[h] += da
                    dA1[0, h] += offsets[e, 0] * da
                    dA1[1, h] += offsets[e, 1] * da
                    dA1[2, h] += offsets[e, 2] * da


def cc_aggregate(p: dict, features: np.ndarray, graph: NeighborGraph) -> np.ndarray:
    """Pre-normalisation layer output (neighbour sum plus residual)."""
    g = np.ascontiguousarray(features @ p["W"])
    h = np.zeros((graph.num_points, g.shape[1]))
    if graph.num_edges:
        _edge_forward(graph.ptr, graph.cols, graph.offsets, graph.row_scale, p["A1"], p["b1"], p["A2"], p["b2"], g, h)
    return h + features @ p["R"]


def cc_layer_naive(positions, features, neighbors, kernel, W) -> np.ndarray:
    """Literal double sum h_{k,i} = sum_d sum_j g_{d,k}(u_i - v_j) f_{d,j}, g_{d,k}(z) = w_k(z) W_{d,k}.

    Reference only: builds the full (N, K, F, O) kernel tensor.  `kernel` maps an
    (..., 3) offset array to (..., O) weights; neighbours are (N, K), no padding.
    """
    positions = np.asarray(positions, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    neighbors = np.asarray(neighbors)
    W = np.asarray(W, dtype=np.float64)
    if features.shape[1] != W.shape[0] or neighbors.shape[0] != features.shape[0]:
        raise ValueError("dimension mismatch")
    delta = positions[:, None, :] - positions[neighbors]  # (N, K, 3)
    wk = np.broadcast_to(kernel(delta), neighbors.shape + (W.shape[1],))
    g = wk[:, :, None, :] * W[None, None, :, :]  # (N, K, F, O)
    return np.einsum("ijdk,ijd->ik", g, features[neighbors])


@dataclass
class LayerCache:
    features: np.ndarray
    xhat: np.ndarray | None
    std: np.ndarray | None
    out: np.ndarray
    bn_mode: str


def layer_forward(p: dict, buffers: dict | None, features, graph: NeighborGraph, bn_mode: str, use_relu: bool, update_stats: bool = True):
    """Returns (output, cache).

    bn_mode: "batch" normalises with batch statistics (and updates the running
    ones if `update_stats`), "frozen" uses the running statistics, "off" skips BN.
    """
    h = cc_aggregate(p, features, graph)
    xhat = std = None
    if bn_mode == "batch":
        mu = h.mean(axis=0)
        var = h.var(axis=0)
        std = np.sqrt(var + BN_EPS)
        xhat = (h - mu) / std
        y = p["gamma"] * xhat + p["beta"]
        if update_stats and buffers is not None:
            n = len(h)
            unbiased = var * n / (n - 1) if n > 1 else var
            buffers["running_mean"] = (1 - BN_MOMENTUM) * buffers["running_mean"] + BN_MOMENTUM * mu
            buffers["running_var"] = (1 - BN_MOMENTUM) * buffers["running_var"] + BN_MOMENTUM * unbiased
    elif bn_mode == "frozen":
        std = np.sqrt(buffers["running_var"] + BN_EPS)
        xhat = (h - buffers["running_mean"]) / std
        y = p["gamma"] * xhat + p["beta"]
    elif bn_mode == "off":
        y = h
    else:
        raise ValueError(f"unknown bn_mode {bn_mode!r}")
    if use_relu:
        y = relu(y)
    return y, LayerCache(features, xhat, std, y, bn_mode)


def layer_backward(p: dict, cache: LayerCache, graph: NeighborGraph, dy: np.ndarray, use_relu: bool):
    """Returns (d features, parameter gradients)."""
    grads = {}
    if use_relu:
        dy = dy * (cache.out > 0)
    if cache.bn_mode == "batch":
        grads["gamma"] = (dy * cache.xhat).sum(axis=0)
        grads["beta"] = dy.sum(axis=0)
        dx = dy * p["gamma"]
        n = len(dy)
        dh = (n * dx - dx.sum(axis=0) - cache.xhat * (dx * cache.xhat).sum(axis=0)) / (n * cache.std)
    elif cache.bn_mode == "frozen":
        grads["gamma"] = (dy * cache.xhat).sum(axis=0)
        grads["beta"] = dy.sum(axis=0)
        dh = dy * p["gamma"] / cache.std
    else:
        dh = dy
        if "gamma" in p:
            grads["gamma"] = np.zeros_like(p["gamma"])
            grads["beta"] = np.zeros_like(p["beta"])

    f = cache.features
    grads["R"] = f.T @ dh
    df = dh @ p["R"].T
    dg = np.zeros((len(f), p["W"].shape[1]))
    for k in ("A1", "b1", "A2", "b2"):
        grads[k] = np.zeros_like(p[k])
    if graph.num_edges:
        g = np.ascontiguousarray(f @ p["W"])
        _edge_backward(
            graph.ptr, graph.cols, graph.offsets, graph.row_scale, p["A1"], p["b1"], p["A2"], p["b2"], g,
            np.ascontiguousarray(dh), dg, grads["A1"], grads["b1"], grads["A2"], grads["b2"],
        )
    grads["W"] = f.T @ dg
    df = df + dg @ p["W"].T
    return df, grads
