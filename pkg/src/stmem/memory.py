"""Non-parametric point memory with an exact k-nearest-neighbour index."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import BACKGROUND, NUM_CLASSES, Sweep
from .formats import write_ply
from .fusion import Association

FEATURE_EPS = 1e-8
DEFAULT_K = 50
DEFAULT_FG_THRESHOLD = 0.1
DEFAULT_HORIZON_M = 30.0


class MissingStatisticsError(RuntimeError):
    pass


@dataclass(frozen=True)
class MemoryPoint:
    position: np.ndarray
    probs: np.ndarray
    intensity: float
    capture_range: float
    sweep_index: int
    odometer: float


@dataclass
class FeatureStats:
    """Per-channel mean and variance of the raw feature vectors."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mean.shape != self.var.shape or np.any(self.var < 0):
            raise ValueError("invalid feature statistics")

    @classmethod
    def identity(cls, dim: int) -> FeatureStats:
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def from_features(cls, rows) -> FeatureStats:
        """Statistics pass over one or more (N, D) raw feature arrays."""
        if isinstance(rows, np.ndarray):
            rows = [rows]
        data = np.concatenate([np.asarray(r, dtype=np.float64) for r in rows if len(r)], axis=0)
        return cls(data.mean(axis=0), data.var(axis=0))

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.mean) / np.sqrt(self.var + FEATURE_EPS)


def exact_knn(positions: np.ndarray, queries: np.ndarray, k: int, tree: cKDTree | None = None):
    """Exact k nearest neighbours, ascending distance, ties broken by lower index.

    Returns (indices, distances) of shape (Q, min(k, N)).  Distances are
    recomputed as sqrt(sum(diff**2)) so they match a brute-force scan bit for bit.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(positions)
    ke = min(k, n)
    if n == 0 or len(queries) == 0:
        return np.empty((len(queries), ke), dtype=np.int64), np.empty((len(queries), ke))
    if ke == n:
        cand = np.broadcast_to(np.arange(n), (len(queries), n))
    else:
        if tree is None:
            tree = cKDTree(positions)
        _, cand = tree.query(queries, k=ke + 1)
        cand = cand.reshape(len(queries), ke + 1)
    cand = np.ascontiguousarray(cand, dtype=np.int64)
    dist = np.sqrt(((positions[cand] - queries[:, None, :]) ** 2).sum(axis=-1))
    order = np.lexsort((cand, dist), axis=-1)
    cand = np.take_along_axis(cand, order, axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    if ke < n:
        # a tie straddling the cut may hide equally distant points with lower index
        for q in np.flatnonzero(dist[:, ke - 1] == dist[:, ke]):
            r = dist[q, ke - 1]
            ball = np.asarray(tree.query_ball_point(queries[q], r * (1 + 1e-12) + 1e-300), dtype=np.int64)
            d = np.sqrt(((positions[ball] - queries[q]) ** 2).sum(axis=-1))
            o = np.lexsort((ball, d))[: ke + 1]
            if len(o) == ke + 1:
                cand[q] = ball[o]
                dist[q] = d[o]
    return cand[:, :ke], dist[:, :ke]


class MemoryStore:
    """Likely-foreground points from past and present sweeps.

    Positions are world frame.  Class probabilities are kept exactly as the
    segmenter produced them (float32) and are never modified afterwards.
    """

    def __init__(self, num_classes: int = NUM_CLASSES, stats: FeatureStats | None = None):
        self.num_classes = num_classes
        self.stats = stats
        self._pos = np.empty((0, 3))
        self._probs = np.empty((0, num_classes), dtype=np.float32)
        self._intensity = np.empty(0)
        self._range = np.empty(0)
        self._sweep = np.empty(0, dtype=np.int64)
        self._odo = np.empty(0)
        self._source = np.empty((0, 2), dtype=np.int64)
        self._tree: cKDTree | None = None
        self._last_sweep = -1

    def __len__(self) -> int:
        return len(self._pos)

    def _ro(self, a):
        v = a.view()
        v.flags.writeable = False
        return v

    positions = property(lambda self: self._ro(self._pos))
    probs = property(lambda self: self._ro(self._probs))
    intensity = property(lambda self: self._ro(self._intensity))
    capture_range = property(lambda self: self._ro(self._range))
    sweep_index = property(lambda self: self._ro(self._sweep))
    odometer = property(lambda self: self._ro(self._odo))
    source = property(lambda self: self._ro(self._source))

    def point(self, i: int) -> MemoryPoint:
        return MemoryPoint(
            self._pos[i].copy(), self._probs[i].copy(), float(self._intensity[i]), float(self._range[i]), int(self._sweep[i]), float(self._odo[i])
        )

    def insert_sweep(
        self,
        sweep: Sweep,
        labels: Association,
        fg_threshold: float = DEFAULT_FG_THRESHOLD,
        sweep_index: int | None = None,
        odometer: float = 0.0,
    ) -> int:
        """Add the in-frame points whose foreground probability reaches `fg_threshold`."""
        if len(labels) != len(sweep):
            raise ValueError(f"{len(labels)} labels for {len(sweep)} points")
        if not 0.0 <= fg_threshold <= 1.0:
            raise ValueError("fg_threshold must lie in [0, 1]")
        if labels.probs.shape[1] != self.num_classes:
            raise ValueError("label class count does not match the store")
        if sweep_index is None:
            sweep_index = self._last_sweep + 1
        if sweep_index < self._last_sweep:
            raise ValueError("sweep_index must not decrease")
        fg = 1.0 - labels.probs[:, BACKGROUND].astype(np.float64)
        keep = np.flatnonzero(labels.in_frame & (fg >= fg_threshold))
        self._last_sweep = sweep_index
        if len(keep) == 0:
            return 0
        local = sweep.points[keep]
        self._pos = np.concatenate([self._pos, sweep.pose.apply(local)])
        self._probs = np.concatenate([self._probs, labels.probs[keep]])
        self._intensity = np.concatenate([self._intensity, sweep.intensity[keep]])
        self._range = np.concatenate([self._range, np.linalg.norm(local, axis=1)])
        self._sweep = np.concatenate([self._sweep, np.full(len(keep), sweep_index, dtype=np.int64)])
        self._odo = np.concatenate([self._odo, np.full(len(keep), float(odometer))])
        src = np.stack([np.full(len(keep), sweep_index, dtype=np.int64), keep.astype(np.int64)], axis=1)
        self._source = np.concatenate([self._source, src])
        self._tree = None
        return len(keep)

    def deprecate(self, current_odometer: float, horizon_m: float = DEFAULT_HORIZON_M) -> int:
        """Drop points captured more than `horizon_m` of ego travel ago."""
        if horizon_m <= 0:
            raise ValueError("horizon must be positive")
        keep = (current_odometer - self._odo) <= horizon_m
        removed = int(len(keep) - keep.sum())
        if removed:
            for name in ("_pos", "_probs", "_intensity", "_range", "_sweep", "_odo", "_source"):
                setattr(self, name, getattr(self, name)[keep])
            self._tree = None
        return removed

    def _index(self) -> cKDTree | None:
        if self._tree is None and len(self):
            self._tree = cKDTree(self._pos)
        return self._tree

    def knn(self, query, k: int):
        """Indices and distances of the k stored points nearest to one query."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not len(self):
            return np.empty(0, dtype=np.int64), np.empty(0)
        idx, dist = exact_knn(self._pos, np.asarray(query, dtype=np.float64).reshape(1, 3), k, self._index())
        return idx[0], dist[0]

    def knn_graph(self, k: int = DEFAULT_K):
        """(N, min(k, N)) neighbour indices of every stored point; column 0 is the point itself
        unless an exact duplicate with a lower index exists."""
        return exact_knn(self._pos, self._pos, k, self._index())

    def raw_features(self, occlusion: np.ndarray) -> np.ndarray:
        """[probs (C), occlusion, intensity, capture range] per point."""
        occlusion = np.asarray(occlusion, dtype=np.float64).reshape(-1)
        if len(occlusion) != len(self):
            raise ValueError("occlusion scores not aligned with memory points")
        return np.concatenate(
            [self._probs.astype(np.float64), occlusion[:, None], self._intensity[:, None], self._range[:, None]], axis=1
        )

    def assemble_features(self, occlusion: np.ndarray, stats: FeatureStats | None = None) -> np.ndarray:
        stats = stats if stats is not None else self.stats
        if stats is None:
            raise MissingStatisticsError(
                "no feature statistics: run the statistics pass (FeatureStats.from_features over training features, "
                "done by `stmem train`) and attach it to the store"
            )
        raw = self.raw_features(occlusion)
        if stats.mean.shape != (raw.shape[1],):
            raise ValueError(f"statistics have {len(stats.mean)} channels, features have {raw.shape[1]}")
        return stats.standardize(raw)

    def export_ply(self, path, labels: np.ndarray | None = None) -> None:
        if labels is None:
            labels = np.argmax(self._probs, axis=1) if len(self) else np.empty(0, dtype=np.int64)
        write_ply(path, self._pos, labels)


def insert_sweep(store: MemoryStore, sweep: Sweep, labels: Association, fg_threshold: float = DEFAULT_FG_THRESHOLD, **kw) -> int:
    return store.insert_sweep(sweep, labels, fg_threshold, **kw)


def deprecate(store: MemoryStore, current_odometer: float, horizon_m: float = DEFAULT_HORIZON_M) -> int:
    return store.deprecate(current_odometer, horizon_m)


def knn(store: MemoryStore, query, k: int):
    return store.knn(query, k)


def assemble_features(store: MemoryStore, occlusion_scores: np.ndarray, stats: FeatureStats | None = None) -> np.ndarray:
    return store.assemble_features(occlusion_scores, stats)
