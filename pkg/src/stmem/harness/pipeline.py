"""Sequence replay for the three labelling modes and cached training inputs."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..ccnet.network import CCNetwork
from ..ccnet.train import Example
from ..core import BACKGROUND
from ..fusion import Association, associate_labels, image_baseline_labels, label_image_digest
from ..memory import MemoryStore, exact_knn
from ..occlusion import build_depth_raster, fill_gaps, occlusion_scores
from ..sim.sequence import LabeledSequence
from .config import Config
from .metrics import eval_mask

MODES = ("memory", "single_sweep", "image_baseline")


@dataclass
class EvalSet:
    """Window points inside the key-frame camera view, with their targets."""

    gt: np.ndarray
    source: np.ndarray  # (M, 2) sweep, point
    distance: np.ndarray  # range from the key-frame sensor
    positions: np.ndarray  # world frame
    offsets: np.ndarray  # per-sweep row offsets into a dense (sweep, point) table
    rows: np.ndarray  # dense table -> eval row or -1

    def __len__(self):
        return len(self.gt)

    def compact(self) -> EvalSet:
        """Drop the dense lookup table once every case has been indexed."""
        self.rows = np.empty(0, dtype=np.int64)
        return self

    def lookup(self, source: np.ndarray) -> np.ndarray:
        """Eval row for each (sweep, point) pair, -1 when outside the set."""
        if len(source) == 0:
            return np.empty(0, dtype=np.int64)
        return self.rows[self.offsets[source[:, 0]] + source[:, 1]]


def target_labels(seq: LabeledSequence, gt: list | None = None) -> list[np.ndarray]:
    """Key-frame targets per window sweep (simulator truth unless `gt` is given)."""
    return gt if gt is not None else seq.keyframe_labels


def evaluation_set(seq: LabeledSequence, gt: list | None = None) -> EvalSet:
    key = seq.key_frame_index
    key_pose = seq.sweeps[key].pose
    labels = target_labels(seq, gt)
    sizes = np.array([len(seq.sweeps[s]) for s in seq.window])
    offsets = np.concatenate([[0], np.cumsum(sizes)])[:-1]
    rows = np.full(int(sizes.sum()), -1, dtype=np.int64)
    g, src, dist, pos = [], [], [], []
    m = 0
    for s in seq.window:
        sw = seq.sweeps[s]
        wp = sw.world_points()
        mask = eval_mask(wp, key_pose, seq.camera)
        idx = np.flatnonzero(mask)
        rows[offsets[s] + idx] = np.arange(m, m + len(idx))
        m += len(idx)
        g.append(np.asarray(labels[s])[idx])
        src.append(np.stack([np.full(len(idx), s, dtype=np.int64), idx], axis=1))
        dist.append(np.linalg.norm(key_pose.apply_inverse(wp[idx]), axis=1))
        pos.append(wp[idx])
    return EvalSet(np.concatenate(g).astype(np.int64), np.concatenate(src), np.concatenate(dist), np.concatenate(pos), offsets, rows)


@dataclass
class KeyState:
    """Memory contents and occlusion scores at the key frame."""

    store: MemoryStore
    occlusion: np.ndarray
    raw: np.ndarray
    digests: list[str] = field(default_factory=list)
    timings: list[float] = field(default_factory=list)


def associations(seq: LabeledSequence, upto: int | None = None) -> list[Association]:
    upto = seq.key_frame_index if upto is None else upto
    return [associate_labels(seq.sweeps[s], seq.camera) for s in range(upto + 1)]


def replay_memory(seq: LabeledSequence, cfg: Config, assocs: list[Association] | None = None) -> KeyState:
    """Insert and deprecate frame by frame up to the key frame, then score occlusion there."""
    assocs = assocs if assocs is not None else associations(seq)
    store = MemoryStore(seq.num_classes)
    odo = seq.odometers
    digests = []
    for s in seq.window:
        sw = seq.sweeps[s]
        digests.append(label_image_digest(sw.label_image))
        store.insert_sweep(sw, assocs[s], cfg.memory.fg_threshold, sweep_index=s, odometer=float(odo[s]))
        store.deprecate(float(odo[s]), cfg.memory.horizon_m)
    key = seq.sweeps[seq.key_frame_index]
    raster = fill_gaps(build_depth_raster(key, seq.lidar), cfg.occlusion.fill_radius)
    occ = occlusion_scores(raster, store.positions, key.pose)
    return KeyState(store, occ, store.raw_features(occ), digests)


def frame_step(store: MemoryStore, sweep, assoc: Association, lidar, cfg: Config, net: CCNetwork, sweep_index: int, odometer: float):
    """One online frame: memory update, occlusion scoring, network inference.  Returns probabilities."""
    store.insert_sweep(sweep, assoc, cfg.memory.fg_threshold, sweep_index=sweep_index, odometer=odometer)
    store.deprecate(odometer, cfg.memory.horizon_m)
    raster = fill_gaps(build_depth_raster(sweep, lidar), cfg.occlusion.fill_radius)
    occ = occlusion_scores(raster, store.positions, sweep.pose)
    feats = store.assemble_features(occ, net.stats)
    _, probs = net.predict(store.positions, feats)
    return probs


def _neighbors(positions: np.ndarray, k: int) -> np.ndarray:
    if len(positions) == 0:
        return np.empty((0, k), dtype=np.int64)
    idx, _ = exact_knn(positions, positions, k)
    return idx.astype(np.int64)


def memory_example(seq: LabeledSequence, cfg: Config, gt: list | None = None, state: KeyState | None = None) -> Example:
    state = state or replay_memory(seq, cfg)
    store = state.store
    labels = target_labels(seq, gt)
    src = store.source
    y = np.array([labels[s][p] for s, p in src], dtype=np.int64) if len(src) else np.empty(0, dtype=np.int64)
    return Example(seq.name, store.positions.copy(), state.raw, _neighbors(store.positions, cfg.memory.k), y, src.copy(), cfg.net.normalize)


def single_sweep_examples(seq: LabeledSequence, cfg: Config, labels: list | None = None, assocs: list[Association] | None = None) -> list[Example]:
    """One example per window frame: its likely-foreground in-frame points, occlusion 0.

    `labels` defaults to capture-time truth (each frame acts as its own key frame).
    """
    assocs = assocs if assocs is not None else associations(seq)
    labels = labels if labels is not None else seq.gt_labels
    out = []
    for s in seq.window:
        sw = seq.sweeps[s]
        store = MemoryStore(seq.num_classes)
        store.insert_sweep(sw, assocs[s], cfg.memory.fg_threshold, sweep_index=s)
        raw = store.raw_features(np.zeros(len(store)))
        src = store.source
        y = np.asarray(labels[s])[src[:, 1]].astype(np.int64)
        out.append(Example(f"{seq.name}#{s}", store.positions.copy(), raw, _neighbors(store.positions, cfg.memory.k), y, src.copy(), cfg.net.normalize))
    return out


@dataclass
class Case:
    """Cached evaluation inputs for one sequence: example parts plus the eval set."""

    name: str
    eval_set: EvalSet
    parts: list[Example]
    part_rows: list[np.ndarray]
    fixed: np.ndarray | None = None  # precomputed predictions (image baseline)
    digests: list[str] = field(default_factory=list)


def build_case(seq: LabeledSequence, cfg: Config, mode: str, gt: list | None = None, assocs=None, state: KeyState | None = None,
               ev: EvalSet | None = None) -> Case:
    ev = ev if ev is not None else evaluation_set(seq, gt)
    assocs = assocs if assocs is not None else associations(seq)
    digests = [label_image_digest(seq.sweeps[s].label_image) for s in seq.window]
    if mode == "memory":
        st = state or replay_memory(seq, cfg, assocs)
        ex = memory_example(seq, cfg, gt, st)
        return Case(seq.name, ev, [ex], [ev.lookup(ex.source)], digests=st.digests)
    if mode == "single_sweep":
        parts = single_sweep_examples(seq, cfg, assocs=assocs)
        return Case(seq.name, ev, parts, [ev.lookup(p.source) for p in parts], digests=digests)
    if mode == "image_baseline":
        labels = image_baseline_labels([seq.sweeps[s] for s in seq.window], seq.camera, assocs)
        pred = np.array([labels[s][p] for s, p in ev.source], dtype=np.int64) if len(ev) else np.empty(0, dtype=np.int64)
        return Case(seq.name, ev, [], [], fixed=pred, digests=digests)
    raise ValueError(f"unknown mode {mode!r}")


def predict_case(case: Case, net: CCNetwork | None) -> np.ndarray:
    """Per-eval-point class ids; points the model never sees are background."""
    if case.fixed is not None:
        return case.fixed
    if net is None:
        raise ValueError("a trained model is required for the learned modes")
    pred = np.full(len(case.eval_set), BACKGROUND, dtype=np.int64)
    for ex, rows in zip(case.parts, case.part_rows):
        if not len(ex):
            continue
        logits, _ = net.forward(net.stats.standardize(ex.raw), ex.graph(), "eval")
        lab = np.argmax(logits, axis=1)
        ok = rows >= 0
        pred[rows[ok]] = lab[ok]
    return pred


def run_pipeline(net: CCNetwork | None, seq: LabeledSequence, mode: str, cfg: Config, gt: list | None = None):
    """(eval set, predictions) for one sequence in the given mode."""
    case = build_case(seq, cfg, mode, gt)
    return case.eval_set, predict_case(case, net), case


def time_frame_step(seq: LabeledSequence, cfg: Config, net: CCNetwork, assocs=None) -> list[tuple[int, float]]:
    """(memory size, seconds) for the online update+score+inference of every window frame."""
    assocs = assocs if assocs is not None else associations(seq)
    store = MemoryStore(seq.num_classes)
    odo = seq.odometers
    out = []
    for s in seq.window:
        t0 = time.perf_counter()
        frame_step(store, seq.sweeps[s], assocs[s], seq.lidar, cfg, net, s, float(odo[s]))
        out.append((len(store), time.perf_counter() - t0))
    return out
