"""LiDAR raycasting and ground-truth label rendering."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import BACKGROUND, Pose
from ..fusion import CameraModel
from .geometry import nearest_hit
from .scenario import LidarConfig


@dataclass
class RaycastResult:
    """Sensor-frame hits of one sweep, in beam-major ray order."""

    points: np.ndarray  # (M, 3) float64
    intensity: np.ndarray  # (M,)
    class_ids: np.ndarray  # (M,)
    object_ids: np.ndarray  # (M,)
    ray_index: np.ndarray  # (M,) flat index into the (beams, azimuths) ray grid

    def __len__(self):
        return len(self.points)


def lidar_directions(lidar: LidarConfig) -> np.ndarray:
    """Unit sensor-frame ray directions, shape (beams * azimuths, 3)."""
    th, ph = np.meshgrid(lidar.pitches, lidar.azimuths, indexing="ij")
    c = np.cos(th)
    return np.stack([c * np.cos(ph), c * np.sin(ph), np.sin(th)], axis=-1).reshape(-1, 3)


def raycast_sweep(primitives, ego_pose: Pose, lidar: LidarConfig, rng: np.random.Generator | None) -> RaycastResult:
    """One ray per (beam, azimuth step); nearest hit within max range.

    Range noise is Gaussian with sigma `lidar.range_noise`, clipped to (0, max_range].
    `primitives` are in the scene frame and `ego_pose` maps sensor -> scene.
    """
    dirs_s = lidar_directions(lidar)
    dirs_w = dirs_s @ ego_pose.rotation.T
    t, idx = nearest_hit(primitives, ego_pose.translation, dirs_w)
    hit = np.flatnonzero(np.isfinite(t) & (t <= lidar.max_range))
    r = t[hit]
    if lidar.range_noise > 0 and len(hit):
        if rng is None:
            raise ValueError("range noise requires an rng")
        r = np.clip(r + rng.normal(0.0, lidar.range_noise, size=len(r)), 1e-3, lidar.max_range)
    prim_idx = idx[hit]
    cls = np.array([primitives[i].class_id for i in range(len(primitives))], dtype=np.int64)
    inten = np.array([primitives[i].intensity for i in range(len(primitives))], dtype=np.float64)
    obj = np.array([primitives[i].object_id for i in range(len(primitives))], dtype=np.int64)
    return RaycastResult(
        points=r[:, None] * dirs_s[hit],
        intensity=inten[prim_idx],
        class_ids=cls[prim_idx],
        object_ids=obj[prim_idx],
        ray_index=hit,
    )


def _pixel_rect_culler(camera: CameraModel, cam_from_scene: Pose):
    w, h = camera.width, camera.height

    def cull(center, radius):
        c = cam_from_scene.apply(center)
        if c[2] + radius <= 0:
            return np.empty(0, dtype=np.int64)
        if c[2] - radius <= 1e-3:
            return None
        us, vs = [], []
        for x in (c[0] - radius, c[0] + radius):
            for z in (c[2] - radius, c[2] + radius):
                us.append(camera.fx * x / z + camera.cx)
        for y in (c[1] - radius, c[1] + radius):
            for z in (c[2] - radius, c[2] + radius):
                vs.append(camera.fy * y / z + camera.cy)
        c0, c1 = max(int(math.floor(min(us))) - 1, 0), min(int(math.ceil(max(us))) + 1, w - 1)
        r0, r1 = max(int(math.floor(min(vs))) - 1, 0), min(int(math.ceil(max(vs))) + 1, h - 1)
        if c0 > c1 or r0 > r1:
            return np.empty(0, dtype=np.int64)
        rows = np.arange(r0, r1 + 1)
        cols = np.arange(c0, c1 + 1)
        return (rows[:, None] * w + cols[None, :]).ravel()

    return cull


def render_label_image(primitives, camera: CameraModel, ego_pose: Pose, pixel_rays: np.ndarray | None = None):
    """True class id and hit range through every pixel centre.

    Returns (ids (H, W) int64, depth (H, W) float64 with inf where nothing is hit).
    """
    scene_from_cam = ego_pose.compose(camera.extrinsic.inverse())
    if pixel_rays is None:
        pixel_rays = camera.pixel_rays()
    dirs = pixel_rays @ scene_from_cam.rotation.T
    t, idx = nearest_hit(primitives, scene_from_cam.translation, dirs, cull=_pixel_rect_culler(camera, scene_from_cam.inverse()))
    cls = np.array([p.class_id for p in primitives] + [BACKGROUND], dtype=np.int64)
    ids = cls[idx].reshape(camera.height, camera.width)
    return ids, t.reshape(camera.height, camera.width)
