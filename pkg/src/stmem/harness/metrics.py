"""Point-wise IoU, evaluation mask and distance-binned reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ..core import DEFAULT_CLASSES, Pose
from ..fusion import CameraModel

FOREGROUND = (1, 2)


def point_iou(pred: np.ndarray, gt: np.ndarray, c: int, mask: np.ndarray | None = None) -> float:
    """|pred=c and gt=c| / |pred=c or gt=c| over masked points; 1 for an empty union."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("pred and gt lengths differ")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != pred.shape:
            raise ValueError("mask length differs")
        pred, gt = pred[mask], gt[mask]
    p, g = pred == c, gt == c
    union = int(np.count_nonzero(p | g))
    return 1.0 if union == 0 else int(np.count_nonzero(p & g)) / union


def eval_mask(world_points: np.ndarray, final_pose: Pose, camera: CameraModel) -> np.ndarray:
    """Points that project into the key-frame image with positive depth."""
    local = final_pose.apply_inverse(np.asarray(world_points, dtype=np.float64).reshape(-1, 3))
    _, valid = camera.project_points(local)
    return valid


@dataclass
class IoUCounter:
    """Pooled intersection and union counts per class (optionally per distance bin)."""

    num_classes: int = 3
    bin_edges: tuple = ()
    inter: np.ndarray = field(init=False)
    union: np.ndarray = field(init=False)

    def __post_init__(self):
        nb = max(len(self.bin_edges) - 1, 0)
        self.inter = np.zeros((nb + 1, self.num_classes), dtype=np.int64)
        self.union = np.zeros((nb + 1, self.num_classes), dtype=np.int64)

    def add(self, pred, gt, distance=None) -> None:
        pred, gt = np.asarray(pred), np.asarray(gt)
        self._add_row(0, pred, gt)
        if distance is not None and len(self.bin_edges) > 1:
            b = np.digitize(distance, self.bin_edges) - 1
            for i in range(len(self.bin_edges) - 1):
                sel = b == i
                if i == len(self.bin_edges) - 2:
                    sel |= distance == self.bin_edges[-1]
                self._add_row(i + 1, pred[sel], gt[sel])

    def _add_row(self, r, pred, gt):
        for c in range(self.num_classes):
            p, g = pred == c, gt == c
            self.inter[r, c] += np.count_nonzero(p & g)
            self.union[r, c] += np.count_nonzero(p | g)

    def iou(self, row: int = 0) -> np.ndarray:
        """Per-class IoU; NaN where the union is empty (class absent)."""
        u = self.union[row]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(u > 0, self.inter[row] / np.maximum(u, 1), np.nan)

    def mean_iou(self, row: int = 0, classes=FOREGROUND) -> float:
        v = self.iou(row)[list(classes)]
        v = v[np.isfinite(v)]
        return float(v.mean()) if len(v) else float("nan")


def binned_iou(pred, gt, positions, final_pose: Pose, bin_edges, c: int | None = None, num_classes: int = 3):
    """IoU per distance bin (distance = range from the final sensor position).

    Returns a list of (lo, hi, value, count); value is NaN for an empty bin.
    With c=None the value is the foreground mean IoU.
    """
    dist = np.linalg.norm(final_pose.apply_inverse(np.asarray(positions, dtype=np.float64).reshape(-1, 3)), axis=1)
    cnt = IoUCounter(num_classes, tuple(bin_edges))
    cnt.add(np.asarray(pred), np.asarray(gt), dist)
    b = np.digitize(dist, bin_edges) - 1
    b[dist == bin_edges[-1]] = len(bin_edges) - 2
    rows = []
    for i in range(len(bin_edges) - 1):
        n = int(np.count_nonzero(b == i))
        val = cnt.mean_iou(i + 1) if c is None else float(cnt.iou(i + 1)[c])
        rows.append((bin_edges[i], bin_edges[i + 1], val if n else float("nan"), n))
    return rows


@dataclass
class EvalReport:
    model: str
    num_sequences: int
    class_names: tuple
    per_class: dict  # class name -> IoU
    mean_iou: float
    bin_edges: tuple
    binned: list  # rows of (lo, hi, {class: IoU}, mean)

    @classmethod
    def from_counter(cls, model: str, counter: IoUCounter, num_sequences: int, class_names=DEFAULT_CLASSES, mean_override: float | None = None):
        names = tuple(class_names)
        per = {names[c]: float(counter.iou(0)[c]) for c in FOREGROUND}
        binned = []
        for i in range(len(counter.bin_edges) - 1):
            iou = counter.iou(i + 1)
            binned.append((counter.bin_edges[i], counter.bin_edges[i + 1], {names[c]: float(iou[c]) for c in FOREGROUND}, counter.mean_iou(i + 1)))
        mean = counter.mean_iou(0) if mean_override is None else mean_override
        return cls(model, num_sequences, names, per, mean, tuple(counter.bin_edges), binned)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "bin_lo", "bin_hi", *[n for n in self.per_class], "mean"])
        w.writerow([self.model, "all", "all", *[repr(v) for v in self.per_class.values()], repr(self.mean_iou)])
        for lo, hi, per, mean in self.binned:
            w.writerow([self.model, lo, hi, *[repr(per[n]) for n in self.per_class], repr(mean)])
        return buf.getvalue()

    def table(self) -> str:
        names = list(self.per_class)
        head = f"{'Model':<28}" + "".join(f"{n.replace('_', ' ').title():>16}" for n in names) + f"{'Mean':>10}"
        pct = lambda v: "   n/a" if not np.isfinite(v) else f"{100 * v:6.1f}"  # noqa: E731
        lines = [head, "-" * len(head)]
        lines.append(f"{self.model:<28}" + "".join(f"{pct(self.per_class[n]):>16}" for n in names) + f"{pct(self.mean_iou):>10}")
        lines.append("")
        lines.append(f"{'distance bin [m]':<28}" + "".join(f"{n.replace('_', ' ').title():>16}" for n in names) + f"{'Mean':>10}")
        for lo, hi, per, mean in self.binned:
            lines.append(f"{f'{lo:g}-{hi:g}':<28}" + "".join(f"{pct(per[n]):>16}" for n in names) + f"{pct(mean):>10}")
        lines.append(f"({self.num_sequences} sequences)")
        return "\n".join(lines)
