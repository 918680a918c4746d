"""Two-phase training loop: Adam at lr, then a BN-frozen finetune at finetune_lr."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..memory import FeatureStats
from .layer import NeighborGraph
from .network import CCNetwork, loss_and_gradients
from .optim import Adam

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class Example:
    """One training/evaluation input: a point set with raw features and labels.

    `source` is (sweep index, point index) per row; `neighbors` the (N, K)
    kNN table (-1 padded) from which the graph is rebuilt on demand.
    """

    name: str
    positions: np.ndarray
    raw: np.ndarray
    neighbors: np.ndarray
    labels: np.ndarray
    source: np.ndarray
    normalize: bool = True
    _graph: NeighborGraph | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.labels)

    def graph(self) -> NeighborGraph:
        if self._graph is None:
            self._graph = NeighborGraph.from_neighbors(self.positions, self.neighbors, self.normalize)
        return self._graph


@dataclass
class TrainConfig:
    lr: float = 1e-3
    finetune_lr: float = 1e-4
    max_iters: int = 2000
    finetune_iters: int = 300
    eval_every: int = 25
    patience: int = 10
    seed: int = 0


@dataclass
class HistoryRow:
    iteration: int
    phase: int
    loss: float
    val_miou: float


def compute_stats(examples: list[Example]) -> FeatureStats:
    """Statistics pass: per-channel mean and variance over all training features."""
    return FeatureStats.from_features([e.raw for e in examples if len(e)])


def write_metrics(path, history: list[HistoryRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss", "val_miou"])
        for r in history:
            w.writerow([r.iteration, repr(float(r.loss)), repr(float(r.val_miou))])


def _snapshot(net: CCNetwork):
    return [{k: v.copy() for k, v in p.items()} for p in net.layers], [{k: v.copy() for k, v in b.items()} for b in net.buffers]


def _restore(net: CCNetwork, snap):
    net.layers = [{k: v.copy() for k, v in p.items()} for p in snap[0]]
    net.buffers = [{k: v.copy() for k, v in b.items()} for b in snap[1]]


def train_step(net: CCNetwork, opt: Adam, ex: Example, mode: str) -> float:
    feats = net.stats.standardize(ex.raw)
    loss, grads, _ = loss_and_gradients(net, feats, ex.graph(), ex.labels, mode=mode)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        worst = max(float(np.abs(p).max()) for _, p in net.param_items())
        raise TrainingError(f"non-finite loss/gradient on example {ex.name!r} (N={len(ex)}), largest |param| = {worst:.3g}, step {opt.t}")
    opt.step(net.params(), grads)
    return loss


def fit(
    net: CCNetwork,
    examples: list[Example],
    validate: Callable[[CCNetwork], float] | None,
    cfg: TrainConfig,
    progress: Callable[[HistoryRow], None] | None = None,
) -> list[HistoryRow]:
    """Train in place; returns the validation history.

    Examples are drawn uniformly at random (batch size 1).  Every `eval_every`
    iterations the model is validated; a phase ends after `patience`
    evaluations without improvement or at its iteration cap, and the best
    parameters seen in that phase are kept.
    """
    if not examples:
        raise TrainingError("no training examples")
    if net.stats is None:
        net.stats = compute_stats(examples)
    rng = np.random.default_rng(cfg.seed)
    history: list[HistoryRow] = []
    it = 0
    for phase, (lr, iters, mode) in enumerate([(cfg.lr, cfg.max_iters, "train"), (cfg.finetune_lr, cfg.finetune_iters, "frozen")], start=1):
        if iters <= 0:
            continue
        opt = Adam(lr)
        best, best_snap, stale = -np.inf, _snapshot(net), 0
        losses = []
        for _ in range(iters):
            ex = examples[int(rng.integers(len(examples)))]
            losses.append(train_step(net, opt, ex, mode))
            it += 1
            if it % cfg.eval_every == 0:
                v = validate(net) if validate is not None else float("nan")
                row = HistoryRow(it, phase, float(np.mean(losses)), v)
                losses = []
                history.append(row)
                if progress:
                    progress(row)
                log.info("iter %d phase %d loss %.4f val mIoU %.4f", it, phase, row.loss, v)
                if validate is None:
                    continue
                if v > best:
                    best, best_snap, stale = v, _snapshot(net), 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        break
        if validate is not None and np.isfinite(best):
            _restore(net, best_snap)
    return history
