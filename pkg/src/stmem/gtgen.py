"""Automatic ground truth: near-range harvesting, DBSCAN denoising, 1-NN propagation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import BACKGROUND, Sweep
from .fusion import CameraModel, associate_labels

log = logging.getLogger(__name__)

NOISE = -1
DEFAULT_RANGE_LIMIT = 25.0
DEFAULT_DELTA = 0.3


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.5
    min_pts: int = 5

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")


def region_query(points: np.ndarray, eps: float) -> list[np.ndarray]:
    """Sorted indices within distance <= eps of every point (itself included).

    The tree proposes candidates with a slightly inflated radius; the exact
    test uses the same arithmetic as a brute-force scan.
    """
    tree = cKDTree(points)
    cands = tree.query_ball_point(points, eps * (1 + 1e-9) + 1e-12)
    out = []
    for i, c in enumerate(cands):
        c = np.asarray(c, dtype=np.int64)
        d = np.sqrt(((points[c] - points[i]) ** 2).sum(axis=1))
        out.append(np.sort(c[d <= eps]))
    return out


def dbscan(points: np.ndarray, params: DbscanParams = DbscanParams()) -> np.ndarray:
    """Cluster id per point, NOISE (-1) for noise.

    Core points have at least min_pts points (itself included) within eps.
    Clusters are the connected components of core points, numbered in order of
    their lowest core index.  A border point joins the cluster of its nearest
    core point, lowest cluster id on an exact distance tie.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    nbrs = region_query(points, params.eps)
    core = np.array([len(c) >= params.min_pts for c in nbrs])
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = cluster
        stack = [i]
        while stack:
            p = stack.pop()
            for q in nbrs[p]:
                if core[q] and labels[q] == NOISE:
                    labels[q] = cluster
                    stack.append(q)
        cluster += 1
    for i in np.flatnonzero(~core):
        c = nbrs[i][core[nbrs[i]]]
        if len(c) == 0:
            continue
        d = np.sqrt(((points[c] - points[i]) ** 2).sum(axis=1))
        near = c[d == d.min()]
        labels[i] = labels[near].min()
    return labels


def core_mask(points: np.ndarray, params: DbscanParams = DbscanParams()) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not len(points):
        return np.zeros(0, dtype=bool)
    return np.array([len(c) >= params.min_pts for c in region_query(points, params.eps)])


@dataclass
class LabeledPoints:
    positions: np.ndarray  # (M, 3) world
    labels: np.ndarray  # (M,)
    source: np.ndarray  # (M, 2) sweep index, point index

    def __len__(self):
        return len(self.labels)


def harvest_near_labels(sweeps: list[Sweep], camera: CameraModel, range_limit: float = DEFAULT_RANGE_LIMIT, frames=None) -> LabeledPoints:
    """In-frame points with sensor range <= range_limit, labelled by argmax, over `frames` (default all)."""
    frames = range(len(sweeps)) if frames is None else frames
    pos, lab, src = [], [], []
    for s in frames:
        sweep = sweeps[s]
        assoc = associate_labels(sweep, camera)
        r = np.linalg.norm(sweep.points, axis=1)
        keep = np.flatnonzero(assoc.in_frame & (r <= range_limit))
        pos.append(sweep.pose.apply(sweep.points[keep]))
        lab.append(np.argmax(assoc.probs[keep], axis=1).astype(np.int64))
        src.append(np.stack([np.full(len(keep), s, dtype=np.int64), keep], axis=1))
    if not pos:
        return LabeledPoints(np.empty((0, 3)), np.empty(0, dtype=np.int64), np.empty((0, 2), dtype=np.int64))
    return LabeledPoints(np.concatenate(pos), np.concatenate(lab), np.concatenate(src))


def denoise(labeled: LabeledPoints, params: DbscanParams = DbscanParams()) -> LabeledPoints:
    """Per foreground class: DBSCAN noise points become background."""
    out = labeled.labels.copy()
    for c in np.unique(labeled.labels):
        if c == BACKGROUND:
            continue
        idx = np.flatnonzero(labeled.labels == c)
        noise = dbscan(labeled.positions[idx], params) == NOISE
        out[idx[noise]] = BACKGROUND
    return LabeledPoints(labeled.positions, out, labeled.source)


def propagate_labels(
    denoised: LabeledPoints, targets: np.ndarray, delta: float = DEFAULT_DELTA, own: np.ndarray | None = None, tree: cKDTree | None = None
) -> np.ndarray:
    """Class of the nearest denoised point within `delta`, else background.

    `own` (aligned with targets, -1 where absent) carries a target's own
    denoised label, which takes precedence.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    out = np.full(len(targets), BACKGROUND, dtype=np.int64)
    if len(denoised) and len(targets):
        tree = tree if tree is not None else cKDTree(denoised.positions)
        d, j = tree.query(targets, k=1)
        ok = d <= delta
        out[ok] = denoised.labels[j[ok]]
    if own is not None:
        own = np.asarray(own)
        out[own >= 0] = own[own >= 0]
    return out


def generate_gt(
    sweeps: list[Sweep],
    camera: CameraModel,
    targets=None,
    range_limit: float = DEFAULT_RANGE_LIMIT,
    params: DbscanParams = DbscanParams(),
    delta: float = DEFAULT_DELTA,
    harvest_frames=None,
) -> list[np.ndarray]:
    """Generated per-point labels for the sweeps in `targets` (default all)."""
    targets = list(range(len(sweeps))) if targets is None else list(targets)
    harvested = denoise(harvest_near_labels(sweeps, camera, range_limit, harvest_frames), params)
    log.info("harvested %d near-range points, %d foreground after denoising", len(harvested), int((harvested.labels != BACKGROUND).sum()))
    tree = cKDTree(harvested.positions) if len(harvested) else None
    out = []
    for s in targets:
        sw = sweeps[s]
        own = np.full(len(sw), -1, dtype=np.int64)
        sel = harvested.source[:, 0] == s
        own[harvested.source[sel, 1]] = harvested.labels[sel]
        out.append(propagate_labels(harvested, sw.world_points(), delta, own, tree))
    return out


def label_agreement(a: list[np.ndarray], b: list[np.ndarray]) -> float:
    x = np.concatenate(a) if a else np.empty(0)
    y = np.concatenate(b) if b else np.empty(0)
    return float(np.mean(x == y)) if len(x) else 1.0

