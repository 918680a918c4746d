"""Four-layer residual CC network, softmax and cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..memory import DEFAULT_K, FeatureStats, exact_knn
from .layer import NeighborGraph, init_layer, layer_backward, layer_forward

DEFAULT_DIMS = (6, 16, 16, 16, 3)


@dataclass
class NetConfig:
    dims: tuple = DEFAULT_DIMS
    hidden: int = 16
    k: int = DEFAULT_K
    normalize: bool = True
    scalar_kernel: bool = False

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise ValueError(f"bad layer dims {self.dims}")


@dataclass
class CCNetwork:
    config: NetConfig
    layers: list
    buffers: list
    stats: FeatureStats | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config: NetConfig | None = None, seed: int = 0) -> CCNetwork:
        config = config or NetConfig()
        rng = np.random.default_rng(seed)
        layers, buffers = [], []
        n = len(config.dims) - 1
        for i in range(n):
            last = i == n - 1
            f_in, f_out = config.dims[i], config.dims[i + 1]
            layers.append(init_layer(rng, f_in, f_out, config.hidden, config.scalar_kernel, bn=not last))
            buffers.append({} if last else {"running_mean": np.zeros(f_out), "running_var": np.ones(f_out)})
        return cls(config, layers, buffers)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_classes(self) -> int:
        return self.config.dims[-1]

    def param_items(self):
        """(name, array) for every trainable tensor, in a fixed order."""
        for i, p in enumerate(self.layers):
            for k in sorted(p):
                yield f"L{i}.{k}", p[k]

    def params(self) -> dict:
        return dict(self.param_items())

    def num_parameters(self) -> int:
        return int(sum(a.size for _, a in self.param_items()))

    def copy(self) -> CCNetwork:
        return CCNetwork(
            self.config,
            [{k: v.copy() for k, v in p.items()} for p in self.layers],
            [{k: v.copy() for k, v in b.items()} for b in self.buffers],
            self.stats,
            dict(self.meta),
        )

    def build_graph(self, positions: np.ndarray, k: int | None = None) -> NeighborGraph:
        idx, _ = exact_knn(positions, positions, k or self.config.k)
        return NeighborGraph.from_neighbors(positions, idx, self.config.normalize)

    def forward(self, features: np.ndarray, graph: NeighborGraph, mode: str = "eval", update_stats: bool = True):
        """Logits and per-layer caches.

        mode "train" uses batch statistics in BN, "frozen" and "eval" use the
        running ones, "nobn" bypasses BN entirely.
        """
        bn_mode = {"train": "batch", "frozen": "frozen", "eval": "frozen", "nobn": "off"}[mode]
        x = np.asarray(features, dtype=np.float64)
        if x.shape[1] != self.config.dims[0]:
            raise ValueError(f"expected {self.config.dims[0]} input channels, got {x.shape[1]}")
        caches = []
        for i, (p, buf) in enumerate(zip(self.layers, self.buffers)):
            last = i == self.num_layers - 1
            x, c = layer_forward(p, buf, x, graph, "off" if last else bn_mode, use_relu=not last, update_stats=update_stats and mode == "train")
            caches.append(c)
        return x, caches

    def predict(self, positions: np.ndarray, features: np.ndarray, graph: NeighborGraph | None = None):
        """(logits, probabilities) in eval mode; builds the kNN graph when not given."""
        if len(positions) == 0:
            return np.empty((0, self.num_classes)), np.empty((0, self.num_classes))
        if graph is None:
            graph = self.build_graph(positions)
        logits, _ = self.forward(features, graph, "eval")
        return logits, softmax(logits)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if len(labels) != n:
        raise ValueError("labels not aligned with logits")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise ValueError("ground-truth class out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), labels])) if n else 0.0
    d = softmax(logits)
    d[np.arange(n), labels] -= 1.0
    return loss, d / max(n, 1)


def loss_and_gradients(net: CCNetwork, features, graph: NeighborGraph, labels, mode: str = "train", update_stats: bool = True):
    """(loss, grads keyed like net.params(), logits). Positions are constants."""
    logits, caches = net.forward(features, graph, mode, update_stats)
    loss, d = cross_entropy(logits, labels)
    grads = {}
    for i in reversed(range(net.num_layers)):
        last = i == net.num_layers - 1
        d, g = layer_backward(net.layers[i], caches[i], graph, d, use_relu=not last)
        for k, v in g.items():
            grads[f"L{i}.{k}"] = v
    return loss, grads, logits
