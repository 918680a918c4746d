"""Random street scenes and dataset generation."""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
import yaml

from ..core import Pose
from ..formats import read_labels, read_sequence, write_labels, write_sequence
from ..fusion import CameraModel
from ..sim.scenario import EgoTrajectory, LidarConfig, Scenario, load_scenario, scenario_from_dict
from ..sim.sequence import LabeledSequence, generate_sequence
from .config import Config

log = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "sim" / "scenarios"
SPLIT_CODES = {"train": 1, "val": 2, "test": 3, "overfit": 4}
KEY_X = 30.0  # ego x at the key frame for straight scenes starting at the origin


def sim_dicts(cfg: Config) -> dict:
    s = cfg.sim
    return {
        "lidar": {"beams": s.beams, "azimuth_step_deg": s.azimuth_step_deg, "range_noise": s.range_noise},
        "camera": {"width": s.camera_width, "height": s.camera_height, "hfov_deg": s.hfov_deg},
        "noise": {"jitter_px": s.jitter_px, "p0": s.p0, "p1": s.p1, "d_max": s.d_max, "softening": s.softening, "blob_px": s.blob_px},
    }


class _Layout:
    """Footprint bookkeeping so random objects do not overlap."""

    def __init__(self):
        self.items: list[tuple[float, float, float]] = []

    def free(self, x, y, r) -> bool:
        return all(math.hypot(x - a, y - b) > r + c + 0.3 for a, b, c in self.items)

    def add(self, x, y, r):
        self.items.append((x, y, r))


def _side(rng) -> float:
    return -1.0 if rng.random() < 0.5 else 1.0


def random_street(cfg: Config, seed: int, split: str, index: int, extension: bool = False) -> dict:
    """Scenario mapping for one random straight street."""
    rng = np.random.default_rng([seed, SPLIT_CODES.get(split, 9), index])
    lay = _Layout()
    speed = float(rng.uniform(cfg.sim.speed_min, cfg.sim.speed_max))
    length = cfg.sim.window_m + 2.0 + (cfg.sim.extension_m if extension else 0.0)
    objects: list[dict] = []
    actors: list[dict] = []

    wall_y = float(rng.uniform(11.0, 16.0))
    for sgn in (-1.0, 1.0):
        if rng.random() < 0.85:
            objects.append({"type": "wall", "x": 60.0, "y": sgn * wall_y, "size": [160.0, 1.0, float(rng.uniform(5.0, 10.0))]})

    def place(r, xlo, xhi, ylo, yhi, tries=50):
        for _ in range(tries):
            x = float(rng.uniform(xlo, xhi))
            y = _side(rng) * float(rng.uniform(ylo, yhi))
            if lay.free(x, y, r):
                lay.add(x, y, r)
                return x, y
        return None

    cone_groups = []
    for _ in range(int(rng.integers(1, 4))):
        at = place(3.0, KEY_X + 5.0, 100.0, 2.8, 5.5)
        if at is None:
            continue
        x0, y0 = at
        n = int(rng.integers(3, 7))
        step = float(rng.uniform(0.8, 1.5))
        drift = float(rng.uniform(-0.3, 0.3))
        kind = "barrel" if rng.random() < 0.25 else "cone"
        pts = [(x0 + i * step - 0.5 * n * step, y0 + i * drift) for i in range(n)]
        objects.extend({"type": kind, "x": px, "y": py} for px, py in pts)
        cone_groups.append(pts)

    for _ in range(int(rng.integers(2, 5))):
        at = place(0.6, 5.0, 105.0, 3.0, 7.0)
        if at is None:
            continue
        x, y = at
        yaw = 180.0 + float(rng.uniform(-25.0, 25.0))
        w = float(rng.uniform(0.6, 1.1))
        objects.append({"type": "sign", "x": x, "y": y, "width": w, "height": w * float(rng.uniform(0.8, 1.2)),
                        "mount_height": float(rng.uniform(1.0, 2.2)), "yaw_deg": yaw})

    for _ in range(int(rng.integers(2, 7))):
        at = place(0.2, -5.0, 110.0, 3.0, 9.0)
        if at is not None:
            objects.append({"type": "pole", "x": at[0], "y": at[1], "height": float(rng.uniform(2.5, 6.0))})
    for _ in range(int(rng.integers(0, 4))):
        at = place(2.5, 0.0, 110.0, 3.5, 8.0)
        if at is not None:
            objects.append({"type": "box", "x": at[0], "y": at[1], "size": [4.5, 1.8, float(rng.uniform(1.4, 1.9))]})

    # departing trailer carrying a sign or cones
    if rng.random() < 0.6:
        at = place(2.5, KEY_X + 10.0, 75.0, 3.0, 5.0)
        if at is not None:
            x, y = at
            t_go = float(rng.uniform(0.8, 0.7 * cfg.sim.window_m / speed))
            away = float(np.sign(y)) * float(rng.uniform(8.0, 10.0))
            dur = float(rng.uniform(1.0, 2.0))
            if rng.random() < 0.5:
                traj = [[0.0, x, y], [t_go, x, y], [t_go + dur, x, y + away]]
            else:
                traj = [[0.0, x, y], [t_go, x, y], [t_go + dur, x + float(rng.uniform(25.0, 45.0)), y]]
            if rng.random() < 0.65:
                cargo = [{"type": "sign", "x": -1.3, "y": 0.0, "width": float(rng.uniform(1.0, 1.6)), "height": float(rng.uniform(0.7, 1.0)),
                          "mount_height": 0.8, "pole_radius": 0.0}]
            else:
                # cones standing on the road just behind the trailer, taken along when it leaves
                cargo = [{"type": "cone", "x": -1.8, "y": 0.45}, {"type": "cone", "x": -1.8, "y": -0.45}]
            parts = [{"type": "box", "x": 0.0, "y": 0.0, "size": [2.5, 1.8, 0.6], "z": 0.5}] + cargo
            actors.append({"name": "trailer", "trajectory": traj, "parts": parts})

    # a car that parks in front of a cone group before the key frame
    if cone_groups and rng.random() < 0.6:
        g = cone_groups[int(rng.integers(len(cone_groups)))]
        gx, gy = np.mean(g, axis=0)
        f = float(rng.uniform(0.45, 0.7))
        cx, cy = KEY_X + f * (gx - KEY_X), f * gy
        if abs(cy) > 1.2 and lay.free(cx, cy, 1.5):
            t_arrive = float(rng.uniform(0.4, 0.8)) * cfg.sim.window_m / speed
            start = cx + float(rng.uniform(30.0, 60.0))
            actors.append({"name": "occluder", "trajectory": [[0.0, start, cy], [t_arrive, cx, cy], [t_arrive + 100.0, cx, cy]],
                           "parts": [{"type": "box", "x": 0.0, "y": 0.0, "size": [4.5, 1.8, float(rng.uniform(1.5, 1.8))]}]})

    data = {
        "name": f"{split}_{index:04d}",
        "seed": int(rng.integers(0, 2**31)),
        "ego": {"waypoints": [[0.0, 0.0], [length, 0.0]], "speed": speed},
        "objects": objects,
        "actors": actors,
    }
    data.update(sim_dicts(cfg))
    return data


def scenario_for(cfg: Config, split: str, index: int, extension: bool = False) -> Scenario:
    return scenario_from_dict(random_street(cfg, cfg.seed, split, index, extension))


def library_scenario(name: str, cfg: Config | None = None, extension: bool = False) -> Scenario:
    """One of the shipped scenarios (forget, remember, reinforce, ...), sensor settings from cfg.

    With `extension` the ego path is prolonged along its final heading so the
    ground-truth extension can be driven.
    """
    path = Path(name)
    if not path.exists():
        path = SCENARIO_DIR / f"{name}.yaml"
    if not path.exists():
        raise FileNotFoundError(f"no scenario {name!r}")
    cfg = cfg or Config()
    sc = load_scenario(path, sim_dicts(cfg))
    need = cfg.sim.window_m + cfg.sim.extension_m + 2.0
    if extension and sc.ego.length < need:
        wp = sc.ego.waypoints.copy()
        d = wp[-1] - wp[-2]
        wp[-1] = wp[-1] + d / np.linalg.norm(d) * (need - sc.ego.length)
        sc.ego = EgoTrajectory(wp, sc.ego.speeds)
    return sc


def simulate(scenario: Scenario, cfg: Config, extension: bool = False) -> LabeledSequence:
    return generate_sequence(scenario, cfg.sim.window_m, cfg.sim.extension_m, include_extension=extension)


def iter_split(cfg: Config, split: str, n: int, extension: bool = False, start: int = 0):
    """Lazily simulate sequences start..start+n-1 of a split (label images are large; stream them)."""
    for i in range(start, start + n):
        seq = simulate(scenario_for(cfg, split, i, extension), cfg, extension)
        log.debug("simulated %s %d", split, i)
        yield seq


def make_split(cfg: Config, split: str, n: int, extension: bool = False) -> list[LabeledSequence]:
    return list(iter_split(cfg, split, n, extension))


def save_sequence(seq: LabeledSequence, directory) -> Path:
    """Writes <name>.stms plus <name>.stmg (sim labels) and a small YAML sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    base = directory / seq.name
    write_sequence(base.with_suffix(".stms"), seq.sweeps, seq.num_classes)
    write_labels(base.with_suffix(".stmg"), seq.gt_labels, seq.keyframe_labels, seq.key_frame_index)
    meta = {
        "name": seq.name,
        "key_frame_index": seq.key_frame_index,
        "extension": [int(i) for i in seq.extension],
        "camera": {"fx": seq.camera.fx, "fy": seq.camera.fy, "cx": seq.camera.cx, "cy": seq.camera.cy,
                   "width": seq.camera.width, "height": seq.camera.height, "extrinsic": seq.camera.extrinsic.as_array().tolist()},
        "lidar": {k: getattr(seq.lidar, k) for k in LidarConfig.__dataclass_fields__},
    }
    base.with_suffix(".yaml").write_text(yaml.safe_dump(meta, sort_keys=True))
    np.savez_compressed(base.with_suffix(".objects.npz"), *seq.object_ids)
    return base


def load_sequence(base) -> LabeledSequence:
    base = Path(base)
    if base.suffix in (".stms", ".stmg", ".yaml"):
        base = base.with_suffix("")
    sweeps, c = read_sequence(base.with_suffix(".stms"))
    capture, keyframe, key = read_labels(base.with_suffix(".stmg"))
    meta = yaml.safe_load(base.with_suffix(".yaml").read_text())
    cam = meta["camera"]
    camera = CameraModel(cam["fx"], cam["fy"], cam["cx"], cam["cy"], cam["width"], cam["height"], Pose.from_array(cam["extrinsic"]))
    obj_path = base.with_suffix(".objects.npz")
    objects = []
    if obj_path.exists():
        with np.load(obj_path) as z:
            objects = [z[f"arr_{i}"] for i in range(len(z.files))]
    return LabeledSequence(
        name=meta["name"],
        sweeps=sweeps,
        gt_labels=capture,
        keyframe_labels=keyframe if keyframe else capture,
        key_frame_index=int(meta["key_frame_index"]),
        camera=camera,
        lidar=LidarConfig(**meta["lidar"]),
        object_ids=objects,
        extension=meta.get("extension", []),
        num_classes=c,
    )


def split_paths(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.stms"))


def iter_load(directory):
    for p in split_paths(directory):
        yield load_sequence(p)


def load_split(directory) -> list[LabeledSequence]:
    return list(iter_load(directory))

