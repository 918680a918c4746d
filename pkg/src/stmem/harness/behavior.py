"""Measurements for the three scripted behaviours: forget, remember, reinforce."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ccnet.network import CCNetwork
from ..core import BACKGROUND, CONSTRUCTION, TRAFFIC_SIGN
from ..sim.sequence import LabeledSequence
from .config import Config
from .metrics import point_iou
from .pipeline import build_case, memory_example, predict_case, replay_memory

OCCLUDED_BELOW = -0.5  # occlusion score [m] under which a memory point counts as hidden


@dataclass
class BehaviorResult:
    name: str
    value: float
    count: int
    threshold: str

    def line(self) -> str:
        return f"{self.name}: {self.value:.4f} over {self.count} points ({self.threshold})"


def memory_predictions(seq: LabeledSequence, cfg: Config, net: CCNetwork):
    """(example, occlusion scores, predicted class) for every memory point at the key frame."""
    state = replay_memory(seq, cfg)
    ex = memory_example(seq, cfg, None, state)
    if not len(ex):
        return ex, state.occlusion, np.empty(0, dtype=np.int64)
    logits, _ = net.forward(net.stats.standardize(ex.raw), ex.graph(), "eval")
    return ex, state.occlusion, np.argmax(logits, axis=1)


def _capture_labels(seq: LabeledSequence, source: np.ndarray) -> np.ndarray:
    return np.array([seq.gt_labels[s][p] for s, p in source], dtype=np.int64)


def forget_fraction(seq: LabeledSequence, cfg: Config, net: CCNetwork) -> BehaviorResult:
    """Share of stale sign points (sign when captured, gone by the key frame) predicted background."""
    ex, _, pred = memory_predictions(seq, cfg, net)
    stale = (_capture_labels(seq, ex.source) == TRAFFIC_SIGN) & (ex.labels == BACKGROUND)
    n = int(stale.sum())
    val = float(np.mean(pred[stale] == BACKGROUND)) if n else float("nan")
    return BehaviorResult("forget", val, n, "stale sign points relabelled background")


def remember_fraction(seq: LabeledSequence, cfg: Config, net: CCNetwork) -> BehaviorResult:
    """Share of hidden cone points (negative occlusion score) still predicted foreground."""
    ex, occ, pred = memory_predictions(seq, cfg, net)
    hidden = (ex.labels == CONSTRUCTION) & (occ < OCCLUDED_BELOW)
    n = int(hidden.sum())
    val = float(np.mean(pred[hidden] != BACKGROUND)) if n else float("nan")
    return BehaviorResult("remember", val, n, "occluded cone points kept foreground")


def sign_iou_near(seq: LabeledSequence, cfg: Config, net: CCNetwork | None, mode: str, centre, radius: float = 3.0) -> tuple[float, int]:
    """Key-frame sign IoU over evaluated points within `radius` (horizontal) of `centre`.

    `centre` is given in the sequence world frame (the first sweep's pose).
    """
    case = build_case(seq, cfg, mode)
    pred = predict_case(case, net)
    ev = case.eval_set
    near = np.hypot(ev.positions[:, 0] - centre[0], ev.positions[:, 1] - centre[1]) <= radius
    return point_iou(pred, ev.gt, TRAFFIC_SIGN, near), int(near.sum())
