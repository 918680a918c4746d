"""Declarative scenario description and its YAML loader.

Schema (all lengths in meters, angles in degrees in the file)::

    name: str
    seed: int
    include: [other.yaml, ...]      # merged first; lists concatenate, mappings merge
    lidar:  {beams, pitch_min_deg, pitch_max_deg, azimuth_step_deg, max_range,
             range_noise, mount_height}
    camera: {width, height, hfov_deg, mount: {x, y, z, pitch_deg}}
    noise:  {jitter_px, p0, p1, d_max, softening, blob_px}
    ego:    {waypoints: [[x, y], ...], speed: v | speeds: [v per segment]}
    objects: [object, ...]
    actors:
      - name: str
        trajectory: [[t, x, y], ...]     # piecewise linear, clamped outside
        yaw_deg: float
        parts: [object, ...]             # in the actor frame

    object:
      {type: cone,   x, y, radius=0.2, height=0.7}
      {type: barrel, x, y, radius=0.3, height=1.0}
      {type: sign,   x, y, width=0.8, height=0.8, mount_height=2.0, yaw_deg=180,
                     pole_radius=0.04}
      {type: box | wall, x, y, z=size_z/2, size: [sx, sy, sz], yaw_deg=0}
      {type: pole,   x, y, radius=0.08, height=3}
      any object may override `class` (background | traffic_sign | construction)
      and `intensity`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..core import BACKGROUND, CONSTRUCTION, DEFAULT_CLASSES, TRAFFIC_SIGN, Pose
from .geometry import Box, Cone, Cylinder, GroundPlane, Primitive, Rectangle


class ScenarioError(ValueError):
    pass


@dataclass
class LidarConfig:
    beams: int = 32
    pitch_min_deg: float = -25.0
    pitch_max_deg: float = 5.0
    azimuth_step_deg: float = 0.4
    max_range: float = 120.0
    range_noise: float = 0.02
    mount_height: float = 1.8

    def __post_init__(self):
        if self.beams < 1 or self.azimuth_step_deg <= 0 or self.max_range <= 0 or self.range_noise < 0:
            raise ScenarioError(f"invalid lidar config: {self}")

    @property
    def pitches(self) -> np.ndarray:
        if self.beams == 1:
            return np.array([math.radians(self.pitch_min_deg)])
        return np.radians(np.linspace(self.pitch_min_deg, self.pitch_max_deg, self.beams))

    @property
    def azimuth_step(self) -> float:
        return math.radians(self.azimuth_step_deg)

    @property
    def azimuths(self) -> np.ndarray:
        n = int(math.ceil(2 * math.pi / self.azimuth_step - 1e-9))
        return np.arange(n) * self.azimuth_step


@dataclass
class CameraConfig:
    width: int = 960
    height: int = 600
    hfov_deg: float = 70.0
    mount: dict = field(default_factory=lambda: {"x": 0.0, "y": 0.0, "z": 0.0, "pitch_deg": 0.0})

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or not 0 < self.hfov_deg < 180:
            raise ScenarioError(f"invalid camera config: {self}")


@dataclass
class NoiseConfig:
    jitter_px: int = 2
    p0: float = 0.01
    p1: float = 0.1
    d_max: float = 100.0
    softening: float = 0.1
    blob_px: int = 1

    def __post_init__(self):
        if min(self.jitter_px, self.p0, self.p1, self.softening) < 0 or self.d_max <= 0 or self.blob_px < 1:
            raise ScenarioError(f"invalid noise config: {self}")
        if self.softening >= 1.0:
            raise ScenarioError("softening must be < 1")

    @classmethod
    def noiseless(cls) -> NoiseConfig:
        return cls(jitter_px=0, p0=0.0, p1=0.0, softening=0.0)


@dataclass
class EgoTrajectory:
    waypoints: np.ndarray
    speeds: np.ndarray

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64).reshape(-1, 2)
        if len(self.waypoints) < 2:
            raise ScenarioError("ego trajectory needs at least 2 waypoints")
        self.speeds = np.broadcast_to(np.asarray(self.speeds, dtype=np.float64), (len(self.waypoints) - 1,)).copy()
        if np.any(self.speeds <= 0):
            raise ScenarioError("ego speeds must be positive")
        seg = np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)
        if np.any(seg <= 0):
            raise ScenarioError("ego waypoints must be distinct")
        self._seg = seg
        self._cum_len = np.concatenate([[0.0], np.cumsum(seg)])
        self._cum_time = np.concatenate([[0.0], np.cumsum(seg / self.speeds)])

    @property
    def length(self) -> float:
        return float(self._cum_len[-1])

    @property
    def duration(self) -> float:
        return float(self._cum_time[-1])

    def distance_at(self, t: float) -> float:
        t = min(max(t, 0.0), self.duration)
        k = min(int(np.searchsorted(self._cum_time, t, side="right")) - 1, len(self._seg) - 1)
        return float(self._cum_len[k] + (t - self._cum_time[k]) * self.speeds[k])

    def state_at(self, t: float) -> tuple[float, float, float, float]:
        """(x, y, yaw, odometer) at time t."""
        s = self.distance_at(t)
        k = min(int(np.searchsorted(self._cum_len, s, side="right")) - 1, len(self._seg) - 1)
        a, b = self.waypoints[k], self.waypoints[k + 1]
        f = (s - self._cum_len[k]) / self._seg[k]
        p = a + f * (b - a)
        yaw = math.atan2(b[1] - a[1], b[0] - a[0])
        return float(p[0]), float(p[1]), yaw, s


@dataclass
class Actor:
    name: str
    trajectory: np.ndarray  # (M, 3): t, x, y
    yaw: float
    parts: list

    def __post_init__(self):
        self.trajectory = np.asarray(self.trajectory, dtype=np.float64).reshape(-1, 3)
        if len(self.trajectory) < 2:
            raise ScenarioError(f"actor {self.name}: trajectory needs at least 2 waypoints")
        if np.any(np.diff(self.trajectory[:, 0]) <= 0):
            raise ScenarioError(f"actor {self.name}: trajectory times must increase")

    def position_at(self, t: float) -> tuple[float, float]:
        tr = self.trajectory
        return float(np.interp(t, tr[:, 0], tr[:, 1])), float(np.interp(t, tr[:, 0], tr[:, 2]))

    def primitives_at(self, t: float) -> list[Primitive]:
        x, y = self.position_at(t)
        return [p.placed(x, y, self.yaw) for p in self.parts]


@dataclass
class Scenario:
    name: str
    static_objects: list
    actors: list
    ego: EgoTrajectory
    lidar: LidarConfig = field(default_factory=LidarConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0
    ground: bool = True

    def primitives_at(self, t: float) -> list[Primitive]:
        prims = list(self.static_objects)
        for actor in self.actors:
            prims.extend(actor.primitives_at(t))
        if self.ground:
            prims.append(GroundPlane(class_id=BACKGROUND, intensity=0.1, object_id=0, height=0.0))
        return prims

    def ego_pose(self, t: float) -> tuple[Pose, float]:
        """Scene-frame sensor pose and odometer at time t."""
        x, y, yaw, odo = self.ego.state_at(t)
        return Pose.from_xyz_yaw(x, y, self.lidar.mount_height, yaw), odo

    def object_actor(self) -> dict[int, int]:
        """object_id -> actor index for every dynamic part."""
        out = {}
        for ai, actor in enumerate(self.actors):
            for p in actor.parts:
                out[p.object_id] = ai
        return out


def class_id(name) -> int:
    if isinstance(name, int):
        return name
    try:
        return DEFAULT_CLASSES.index(name)
    except ValueError:
        raise ScenarioError(f"unknown class {name!r}") from None


def build_object(spec: dict, next_id) -> list[Primitive]:
    """Turn one object mapping into primitives; `next_id()` hands out object ids."""
    spec = dict(spec)
    kind = spec.pop("type")
    x, y = float(spec.pop("x", 0.0)), float(spec.pop("y", 0.0))
    cls = spec.pop("class", None)
    intensity = spec.pop("intensity", None)

    def opts(default_cls, default_int):
        return {
            "class_id": class_id(cls) if cls is not None else default_cls,
            "intensity": float(intensity) if intensity is not None else default_int,
            "object_id": next_id(),
        }

    if kind == "cone":
        return [Cone(base=(x, y, 0.0), radius=float(spec.get("radius", 0.2)), height=float(spec.get("height", 0.7)), **opts(CONSTRUCTION, 0.55))]
    if kind == "barrel":
        return [Cylinder(base=(x, y, 0.0), radius=float(spec.get("radius", 0.3)), height=float(spec.get("height", 1.0)), **opts(CONSTRUCTION, 0.6))]
    if kind == "pole":
        return [Cylinder(base=(x, y, 0.0), radius=float(spec.get("radius", 0.08)), height=float(spec.get("height", 3.0)), **opts(BACKGROUND, 0.3))]
    if kind == "sign":
        w, h = float(spec.get("width", 0.8)), float(spec.get("height", 0.8))
        mount = float(spec.get("mount_height", 2.0))
        z0 = float(spec.get("z", 0.0))
        yaw = math.radians(float(spec.get("yaw_deg", 180.0)))
        plate = Rectangle(center=(x, y, z0 + mount + 0.5 * h), width=w, height=h, yaw=yaw, **opts(TRAFFIC_SIGN, 0.9))
        prims = [plate]
        pole_r = float(spec.get("pole_radius", 0.04))
        if pole_r > 0 and mount > 0:
            # pole sits just behind the plate so it never pokes through the face
            off = pole_r + 0.02
            px, py = x - off * math.cos(yaw), y - off * math.sin(yaw)
            prims.append(Cylinder(base=(px, py, z0), radius=pole_r, height=mount + 0.5 * h, class_id=BACKGROUND, intensity=0.3, object_id=next_id()))
        return prims
    if kind in ("box", "wall"):
        size = tuple(float(v) for v in spec.get("size", (1.0, 1.0, 1.0)))
        z = float(spec.get("z", 0.5 * size[2]))
        yaw = math.radians(float(spec.get("yaw_deg", 0.0)))
        return [Box(center=(x, y, z), size=size, yaw=yaw, **opts(BACKGROUND, 0.25 if kind == "wall" else 0.2))]
    raise ScenarioError(f"unknown object type {kind!r}")


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if k in out and isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v)
        elif k in out and isinstance(out[k], list) and isinstance(v, list):
            out[k] = out[k] + v
        else:
            out[k] = v
    return out


def load_scenario_dict(path, _seen=None) -> dict:
    """Read a scenario file and resolve `include` entries relative to it."""
    path = Path(path)
    _seen = set() if _seen is None else _seen
    key = path.resolve()
    if key in _seen:
        raise ScenarioError(f"include cycle at {path}")
    _seen = _seen | {key}
    data = yaml.safe_load(path.read_text()) or {}
    merged: dict = {}
    for inc in data.pop("include", []) or []:
        inc_path = Path(inc)
        if not inc_path.is_absolute():
            inc_path = path.parent / inc_path
        merged = _merge(merged, load_scenario_dict(inc_path, _seen))
    return _merge(merged, data)


def scenario_from_dict(data: dict) -> Scenario:
    counter = iter(range(1, 1 << 30))

    def next_id():
        return next(counter)

    statics = []
    for spec in data.get("objects", []) or []:
        statics.extend(build_object(spec, next_id))
    actors = []
    for a in data.get("actors", []) or []:
        parts = []
        for spec in a.get("parts", []):
            parts.extend(build_object(spec, next_id))
        actors.append(Actor(a.get("name", f"actor{len(actors)}"), a["trajectory"], math.radians(float(a.get("yaw_deg", 0.0))), parts))
    ego = data.get("ego")
    if not ego:
        raise ScenarioError("scenario needs an ego trajectory")
    speeds = ego.get("speeds", ego.get("speed", 5.0))
    return Scenario(
        name=str(data.get("name", "scenario")),
        static_objects=statics,
        actors=actors,
        ego=EgoTrajectory(ego["waypoints"], speeds),
        lidar=LidarConfig(**(data.get("lidar") or {})),
        camera=CameraConfig(**(data.get("camera") or {})),
        noise=NoiseConfig(**(data.get("noise") or {})),
        seed=int(data.get("seed", 0)),
        ground=bool(data.get("ground", True)),
    )


def load_scenario(path, overrides: dict | None = None) -> Scenario:
    data = load_scenario_dict(path)
    if overrides:
        data = _merge(data, overrides)
    return scenario_from_dict(data)


def config_dict(cfg) -> dict:
    return asdict(cfg)
