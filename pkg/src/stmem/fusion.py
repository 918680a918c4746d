"""Camera projection, per-point label association and the image baseline."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .core import BACKGROUND, Pose, Sweep

# sensor (x fwd, y left, z up) -> camera (x right, y down, z fwd)
SENSOR_TO_CAMERA_AXES = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


class MissingLabelImageError(ValueError):
    pass


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: Pose = Pose(SENSOR_TO_CAMERA_AXES, np.zeros(3))  # camera <- sensor

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_config(cls, cfg) -> CameraModel:
        """Pinhole camera from a CameraConfig (square pixels, centred principal point)."""
        fx = 0.5 * cfg.width / math.tan(math.radians(cfg.hfov_deg) / 2)
        mount = cfg.mount or {}
        pitch = math.radians(float(mount.get("pitch_deg", 0.0)))
        c, s = math.cos(pitch), math.sin(pitch)
        # positive pitch tilts the optical axis down
        body_rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        body = Pose(body_rot, [float(mount.get(k, 0.0)) for k in ("x", "y", "z")])  # sensor <- body
        extrinsic = Pose(SENSOR_TO_CAMERA_AXES, np.zeros(3)).compose(body.inverse())
        return cls(fx, fx, cfg.width / 2.0, cfg.height / 2.0, int(cfg.width), int(cfg.height), extrinsic)

    @property
    def center_in_sensor(self) -> np.ndarray:
        return self.extrinsic.inverse().translation

    def to_camera(self, p_sensor: np.ndarray) -> np.ndarray:
        return self.extrinsic.apply(p_sensor)

    def project_camera_points(self, pc: np.ndarray):
        """Pixel coordinates of camera-frame points and the validity mask."""
        pc = np.asarray(pc, dtype=np.float64).reshape(-1, 3)
        z = pc[:, 2]
        pos = z > 0
        safe_z = np.where(pos, z, 1.0)
        u = self.fx * pc[:, 0] / safe_z + self.cx
        v = self.fy * pc[:, 1] / safe_z + self.cy
        valid = pos & (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)
        return np.stack([u, v], axis=1), valid

    def project_points(self, p_sensor: np.ndarray):
        return self.project_camera_points(self.to_camera(p_sensor))

    def pixel_rays(self) -> np.ndarray:
        """Unit camera-frame directions through every pixel centre, (H*W, 3) row-major."""
        cols, rows = np.meshgrid(np.arange(self.width, dtype=np.float64), np.arange(self.height, dtype=np.float64))
        d = np.stack([(cols - self.cx) / self.fx, (rows - self.cy) / self.fy, np.ones_like(cols)], axis=-1).reshape(-1, 3)
        return d / np.linalg.norm(d, axis=1, keepdims=True)


def project_point(camera: CameraModel, p_sensor):
    """(u, v) for a single sensor-frame point, or None when behind / outside the image."""
    uv, valid = camera.project_points(np.asarray(p_sensor, dtype=np.float64).reshape(1, 3))
    if not valid[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def nearest_pixel(uv: np.ndarray, width: int, height: int) -> np.ndarray:
    """Round half away from zero, then clamp to the image; returns int (col, row)."""
    r = np.sign(uv) * np.floor(np.abs(uv) + 0.5)
    col = np.clip(r[:, 0], 0, width - 1).astype(np.int64)
    row = np.clip(r[:, 1], 0, height - 1).astype(np.int64)
    return np.stack([col, row], axis=1)


@dataclass
class Association:
    """Segmenter probabilities attached to a sweep's points.

    probs rows for out-of-frame points are zero; `in_frame` tells them apart.
    """

    probs: np.ndarray  # (N, C) float32
    in_frame: np.ndarray  # (N,) bool
    pixels: np.ndarray  # (N, 2) int (col, row); -1 when out of frame

    def __len__(self):
        return len(self.in_frame)


def associate_labels(sweep: Sweep, camera: CameraModel) -> Association:
    if sweep.label_image is None:
        raise MissingLabelImageError("sweep has no label image to associate")
    image = sweep.label_image
    h, w, c = image.shape
    if (h, w) != (camera.height, camera.width):
        raise ValueError(f"label image {w}x{h} does not match camera {camera.width}x{camera.height}")
    uv, valid = camera.project_points(sweep.points)
    pix = np.full((len(sweep), 2), -1, dtype=np.int64)
    probs = np.zeros((len(sweep), c), dtype=np.float32)
    if valid.any():
        px = nearest_pixel(uv[valid], w, h)
        pix[valid] = px
        probs[valid] = image[px[:, 1], px[:, 0]]
    return Association(probs, valid, pix)


def label_image_digest(image: np.ndarray | None) -> str:
    if image is None:
        return "none"
    return hashlib.sha256(np.ascontiguousarray(image).tobytes()).hexdigest()


def image_baseline_labels(sweeps: list[Sweep], camera: CameraModel, associations: list[Association] | None = None):
    """Per-sweep argmax labels of in-frame points, never revised by later frames.

    Points outside the image at their own capture time are labelled background.
    """
    if associations is None:
        associations = [associate_labels(s, camera) for s in sweeps]
    out = []
    for assoc in associations:
        labels = np.full(len(assoc), BACKGROUND, dtype=np.int64)
        labels[assoc.in_frame] = np.argmax(assoc.probs[assoc.in_frame], axis=1)
        out.append(labels)
    return out
