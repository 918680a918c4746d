"""Geometric primitives, frame conversions and the value types shared by every module.

Sensor frame: x forward, y lateral, z up (right-handed). Poses map sensor -> world.
All geometry is float64; label images are float32 because that is what gets stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

BACKGROUND = 0
TRAFFIC_SIGN = 1
CONSTRUCTION = 2
DEFAULT_CLASSES = ("background", "traffic_sign", "construction")
NUM_CLASSES = len(DEFAULT_CLASSES)

PROB_SUM_TOL = 1e-6
POSE_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for degenerate geometric inputs (zero vectors, invalid rotations)."""


class Polar(NamedTuple):
    r: float
    azimuth: float
    pitch: float


def cart_to_polar(p) -> Polar:
    """Range, azimuth atan2(y, x) and pitch asin(z / r) of a single point.

    Pitch is evaluated as atan2(z, hypot(x, y)), the same angle without the
    loss of precision asin suffers near the poles.
    """
    x, y, z = (float(v) for v in p)
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        raise GeometryError("cart_to_polar: zero vector has no direction")
    return Polar(r, math.atan2(y, x), math.atan2(z, math.hypot(x, y)))


def polar_to_cart(q) -> np.ndarray:
    r, az, pitch = q
    c = math.cos(pitch)
    return np.array([r * c * math.cos(az), r * c * math.sin(az), r * math.sin(pitch)])


def cart_to_polar_array(points: np.ndarray) -> np.ndarray:
    """Vectorised cart_to_polar; returns (N, 3) columns r, azimuth, pitch.

    Zero rows map to (0, 0, 0) instead of raising.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    az = np.arctan2(y, x)
    pitch = np.arctan2(z, np.hypot(x, y))
    out = np.stack([r, az, pitch], axis=1)
    out[r == 0] = 0.0
    return out


def polar_to_cart_array(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    r, az, pitch = q[:, 0], q[:, 1], q[:, 2]
    c = np.cos(pitch)
    return np.stack([r * c * np.cos(az), r * c * np.sin(az), r * np.sin(pitch)], axis=1)


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """Rigid transform p_world = R @ p_sensor + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise GeometryError("pose contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() > POSE_TOL or abs(np.linalg.det(R) - 1.0) > POSE_TOL:
            raise GeometryError("pose rotation is not a proper rotation")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_xyz_yaw(cls, x: float, y: float, z: float, yaw: float) -> Pose:
        return cls(yaw_matrix(yaw), np.array([x, y, z], dtype=np.float64))

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ self.rotation

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: Pose) -> Pose:
        """self ∘ other: apply `other` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def as_array(self) -> np.ndarray:
        """12 values: rotation row-major then translation."""
        return np.concatenate([self.rotation.ravel(), self.translation])

    @classmethod
    def from_array(cls, values) -> Pose:
        values = np.asarray(values, dtype=np.float64)
        return cls(values[:9].reshape(3, 3), values[9:12])

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash(self.as_array().tobytes())


def transform(pose: Pose, p) -> np.ndarray:
    return pose.apply(p)


def inverse_transform(pose: Pose, p) -> np.ndarray:
    return pose.apply_inverse(p)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest proper rotation (SVD projection); used after interpolating or composing."""
    u, _, vt = np.linalg.svd(R)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def validate_probs(probs: np.ndarray, tol: float = PROB_SUM_TOL) -> None:
    """Raise ValueError unless every row is a probability vector."""
    probs = np.asarray(probs)
    if probs.size == 0:
        return
    if np.any(~np.isfinite(probs)) or probs.min() < 0.0 or probs.max() > 1.0:
        raise ValueError("class probabilities must lie in [0, 1]")
    if np.abs(probs.sum(axis=-1, dtype=np.float64) - 1.0).max() > tol:
        raise ValueError("class probabilities must sum to 1")


def one_hot(ids: np.ndarray, num_classes: int = NUM_CLASSES, dtype=np.float32) -> np.ndarray:
    ids = np.asarray(ids)
    out = np.zeros(ids.shape + (num_classes,), dtype=dtype)
    np.put_along_axis(out, ids[..., None].astype(np.int64), 1, axis=-1)
    return out


@dataclass
class Sweep:
    """One LiDAR scan with its ego pose and the segmenter output for the same instant.

    points are sensor-frame (N, 3); label_image is (H, W, C) float32 or None.
    """

    points: np.ndarray
    intensity: np.ndarray
    pose: Pose
    timestamp: float
    label_image: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if len(self.points) != len(self.intensity):
            raise ValueError("points and intensity length differ")
        if len(self.intensity) and (self.intensity.min() < 0 or self.intensity.max() > 1):
            raise ValueError("intensity must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.points)

    def world_points(self) -> np.ndarray:
        return self.pose.apply(self.points)


def odometer(poses: list[Pose]) -> np.ndarray:
    """Cumulative ego travel (meters) at each pose, from consecutive translations."""
    if not poses:
        return np.zeros(0)
    t = np.stack([p.translation for p in poses])
    steps = np.linalg.norm(np.diff(t, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])
