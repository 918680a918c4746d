"""Turn a scenario into a labelled sequence of sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..core import BACKGROUND, NUM_CLASSES, Pose, Sweep, odometer
from ..fusion import CameraModel
from .noise import corrupt_segmentation
from .scenario import LidarConfig, Scenario, ScenarioError
from .sensors import raycast_sweep, render_label_image

log = logging.getLogger(__name__)

FRAME_DT = 0.1
FRAME_SPACING = 0.5
WINDOW_M = 30.0
EXTENSION_M = 100.0
DYNAMIC_TOL = 0.25
_EPS = 1e-9


@dataclass
class LabeledSequence:
    name: str
    sweeps: list[Sweep]
    gt_labels: list[np.ndarray]  # class at capture time
    keyframe_labels: list[np.ndarray]  # class of that location at the key frame
    key_frame_index: int
    camera: CameraModel
    lidar: LidarConfig
    object_ids: list[np.ndarray] = field(default_factory=list)
    extension: list[int] = field(default_factory=list)
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        if not 0 <= self.key_frame_index < len(self.sweeps):
            raise ValueError("key frame index out of range")
        for s, g, k in zip(self.sweeps, self.gt_labels, self.keyframe_labels):
            if len(g) != len(s) or len(k) != len(s):
                raise ValueError("label count differs from point count")

    @property
    def window(self) -> list[int]:
        return list(range(self.key_frame_index + 1))

    @property
    def odometers(self) -> np.ndarray:
        return odometer([s.pose for s in self.sweeps])

    @property
    def key_sweep(self) -> Sweep:
        return self.sweeps[self.key_frame_index]


def sample_frame_times(scenario: Scenario, frame_dt: float = FRAME_DT, spacing: float = FRAME_SPACING):
    """Tick times (on the 10 Hz LiDAR clock) kept by the displacement rule.

    A tick is kept once the ego has moved at least `spacing` since the last kept
    one, so slow driving samples by distance and fast driving every tick.
    """
    times, odos = [0.0], [0.0]
    k = 1
    while k * frame_dt <= scenario.ego.duration + _EPS:
        t = k * frame_dt
        s = scenario.ego.distance_at(t)
        if s - odos[-1] >= spacing - _EPS:
            times.append(t)
            odos.append(s)
        k += 1
    return np.array(times), np.array(odos)


def generate_sequence(
    scenario: Scenario,
    window_m: float = WINDOW_M,
    extension_m: float = EXTENSION_M,
    include_extension: bool = True,
    camera: CameraModel | None = None,
    dynamic_tol: float = DYNAMIC_TOL,
) -> LabeledSequence:
    """Simulate the training window up to the key frame, then optionally the GT extension.

    The key frame is the first sampled frame at least `window_m` of travel from
    the start of the trajectory.  World frame = pose of the first emitted sweep.
    """
    if scenario.ego.length < window_m - _EPS:
        raise ScenarioError(f"{scenario.name}: trajectory {scenario.ego.length:.1f} m is shorter than the {window_m} m window")
    times, odos = sample_frame_times(scenario)
    key = int(np.flatnonzero(odos >= window_m - _EPS)[0])
    first = int(np.flatnonzero(odos >= odos[key] - window_m - _EPS)[0])
    last = key
    if include_extension:
        ext = np.flatnonzero(odos <= odos[key] + extension_m + _EPS)
        last = int(ext[-1])
        if odos[last] < odos[key] + extension_m - FRAME_SPACING:
            log.warning("%s: trajectory ends %.1f m into the %.0f m extension", scenario.name, odos[last] - odos[key], extension_m)
    if camera is None:
        camera = CameraModel.from_config(scenario.camera)
    rays = camera.pixel_rays()
    actor_of = scenario.object_actor()
    t_key = times[key]

    world_from_scene = None
    sweeps, gts, kf_labels, objs = [], [], [], []
    for i in range(first, last + 1):
        t = float(times[i])
        scene_pose, _ = scenario.ego_pose(t)
        if world_from_scene is None:
            world_from_scene = scene_pose.inverse()
        prims = scenario.primitives_at(t)
        tick = int(round(t / FRAME_DT))
        lidar_rng = np.random.default_rng([scenario.seed, tick, 0])
        image_rng = np.random.default_rng([scenario.seed, tick, 1])
        hits = raycast_sweep(prims, scene_pose, scenario.lidar, lidar_rng)
        ids, depth = render_label_image(prims, camera, scene_pose, rays)
        label_image = corrupt_segmentation(ids, depth, scenario.noise, image_rng)

        keyframe = hits.class_ids.copy()
        for oid in np.unique(hits.object_ids):
            a = actor_of.get(int(oid))
            if a is None:
                continue
            p0 = np.array(scenario.actors[a].position_at(t))
            p1 = np.array(scenario.actors[a].position_at(t_key))
            if np.linalg.norm(p1 - p0) > dynamic_tol:
                keyframe[hits.object_ids == oid] = BACKGROUND

        pose = world_from_scene.compose(scene_pose)
        pts = hits.points.astype(np.float32).astype(np.float64)
        inten = hits.intensity.astype(np.float32).astype(np.float64)
        sweeps.append(Sweep(pts, inten, pose, t, label_image))
        gts.append(hits.class_ids)
        kf_labels.append(keyframe)
        objs.append(hits.object_ids)

    return LabeledSequence(
        name=scenario.name,
        sweeps=sweeps,
        gt_labels=gts,
        keyframe_labels=kf_labels,
        key_frame_index=key - first,
        camera=camera,
        lidar=scenario.lidar,
        object_ids=objs,
        extension=list(range(key - first + 1, last - first + 1)),
    )
