"""Analytically intersectable primitives.

Every primitive answers ``intersect(origin, dirs)`` with the ray parameter of
the nearest hit for each unit direction (``inf`` on a miss).  Scene frame: z up,
ground at z = 0.  Only yaw rotations are supported, which is all the scenarios need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..core import BACKGROUND, CONSTRUCTION, TRAFFIC_SIGN

T_EPS = 1e-6


def _safe(d: np.ndarray) -> np.ndarray:
    return np.where(d == 0.0, 1e-300, d)


def _rotate_xy(x, y, yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return c * x - s * y, s * x + c * y


@dataclass(frozen=True)
class Primitive:
    class_id: int = BACKGROUND
    intensity: float = 0.2
    object_id: int = -1

    def bounding_sphere(self):
        """(center, radius) or None for unbounded primitives."""
        return None

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def placed(self, x: float, y: float, yaw: float) -> Primitive:
        """Copy expressed in a parent frame where this primitive's frame sits at (x, y, yaw)."""
        raise NotImplementedError


@dataclass(frozen=True)
class GroundPlane(Primitive):
    height: float = 0.0

    def intersect(self, origin, dirs):
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.height - origin[2]) / _safe(dz)
        return np.where((t > T_EPS) & (dz != 0.0), t, np.inf)

    def placed(self, x, y, yaw):
        return self


@dataclass(frozen=True)
class Box(Primitive):
    """Box with yaw; center is the geometric center."""

    center: tuple = (0.0, 0.0, 0.0)
    size: tuple = (1.0, 1.0, 1.0)
    yaw: float = 0.0

    def bounding_sphere(self):
        return np.asarray(self.center, dtype=np.float64), 0.5 * float(np.linalg.norm(self.size))

    def intersect(self, origin, dirs):
        c = np.asarray(self.center, dtype=np.float64)
        e = origin - c
        ex, ey = _rotate_xy(e[0], e[1], -self.yaw)
        o = np.array([ex, ey, e[2]])
        dx, dy = _rotate_xy(dirs[:, 0], dirs[:, 1], -self.yaw)
        d = np.stack([dx, dy, dirs[:, 2]], axis=1)
        half = 0.5 * np.asarray(self.size, dtype=np.float64)
        with np.errstate(over="ignore", invalid="ignore"):
            inv = 1.0 / _safe(d)
            t1 = (-half - o) * inv
            t2 = (half - o) * inv
        tnear = np.minimum(t1, t2).max(axis=1)
        tfar = np.maximum(t1, t2).min(axis=1)
        hit = (tnear <= tfar) & (tnear > T_EPS)
        return np.where(hit, tnear, np.inf)

    def placed(self, x, y, yaw):
        cx, cy = _rotate_xy(self.center[0], self.center[1], yaw)
        return replace(self, center=(cx + x, cy + y, self.center[2]), yaw=self.yaw + yaw)


@dataclass(frozen=True)
class Cylinder(Primitive):
    """Vertical capped cylinder standing on base (x, y, z)."""

    base: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.1
    height: float = 1.0

    def bounding_sphere(self):
        c = np.array([self.base[0], self.base[1], self.base[2] + 0.5 * self.height])
        return c, math.hypot(self.radius, 0.5 * self.height)

    def intersect(self, origin, dirs):
        bx, by, z0 = self.base
        z1 = z0 + self.height
        ex, ey = origin[0] - bx, origin[1] - by
        dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        a = dx * dx + dy * dy
        b = 2.0 * (ex * dx + ey * dy)
        c = ex * ex + ey * ey - self.radius**2
        disc = b * b - 4.0 * a * c
        best = np.full(len(dirs), np.inf)
        ok = (disc >= 0.0) & (a > 1e-18)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            sq = np.sqrt(np.where(ok, disc, 0.0))
            for t in ((-b - sq) / _safe(2.0 * a), (-b + sq) / _safe(2.0 * a)):
                z = origin[2] + t * dz
                good = ok & (t > T_EPS) & (z >= z0) & (z <= z1)
                best = np.where(good & (t < best), t, best)
            for zc in (z0, z1):
                t = (zc - origin[2]) / _safe(dz)
                px, py = ex + t * dx, ey + t * dy
                good = (dz != 0.0) & (t > T_EPS) & (px * px + py * py <= self.radius**2)
                best = np.where(good & (t < best), t, best)
        return best

    def placed(self, x, y, yaw):
        bx, by = _rotate_xy(self.base[0], self.base[1], yaw)
        return replace(self, base=(bx + x, by + y, self.base[2]))


@dataclass(frozen=True)
class Cone(Primitive):
    """Vertical cone: base disk at (x, y, z) with radius, apex `height` above."""

    class_id: int = CONSTRUCTION
    intensity: float = 0.55
    base: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.2
    height: float = 0.7

    def bounding_sphere(self):
        c = np.array([self.base[0], self.base[1], self.base[2] + 0.5 * self.height])
        return c, math.hypot(self.radius, 0.5 * self.height)

    def intersect(self, origin, dirs):
        bx, by, z0 = self.base
        za = z0 + self.height
        k2 = (self.radius / self.height) ** 2
        ex, ey = origin[0] - bx, origin[1] - by
        w0 = za - origin[2]
        dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        a = dx * dx + dy * dy - k2 * dz * dz
        b = 2.0 * (ex * dx + ey * dy + k2 * w0 * dz)
        c = ex * ex + ey * ey - k2 * w0 * w0
        best = np.full(len(dirs), np.inf)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            quad = np.abs(a) > 1e-12
            disc = b * b - 4.0 * a * c
            ok = quad & (disc >= 0.0)
            sq = np.sqrt(np.where(ok, disc, 0.0))
            lin_t = np.where(~quad & (b != 0.0), -c / _safe(b), np.inf)
            roots = (
                np.where(ok, (-b - sq) / _safe(2.0 * a), np.inf),
                np.where(ok, (-b + sq) / _safe(2.0 * a), np.inf),
                lin_t,
            )
            for t in roots:
                z = origin[2] + t * dz
                good = np.isfinite(t) & (t > T_EPS) & (z >= z0) & (z <= za)
                best = np.where(good & (t < best), t, best)
            t = (z0 - origin[2]) / _safe(dz)
            px, py = ex + t * dx, ey + t * dy
            good = (dz != 0.0) & (t > T_EPS) & (px * px + py * py <= self.radius**2)
            best = np.where(good & (t < best), t, best)
        return best

    def placed(self, x, y, yaw):
        bx, by = _rotate_xy(self.base[0], self.base[1], yaw)
        return replace(self, base=(bx + x, by + y, self.base[2]))


@dataclass(frozen=True)
class Rectangle(Primitive):
    """Vertical double-sided plate; `yaw` is the direction of its normal."""

    class_id: int = TRAFFIC_SIGN
    intensity: float = 0.9
    center: tuple = (0.0, 0.0, 2.0)
    width: float = 0.8
    height: float = 0.8
    yaw: float = 0.0

    def bounding_sphere(self):
        return np.asarray(self.center, dtype=np.float64), 0.5 * math.hypot(self.width, self.height)

    def intersect(self, origin, dirs):
        c = np.asarray(self.center, dtype=np.float64)
        n = np.array([math.cos(self.yaw), math.sin(self.yaw), 0.0])
        tang = np.array([-math.sin(self.yaw), math.cos(self.yaw), 0.0])
        denom = dirs @ n
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            t = float(n @ (c - origin)) / _safe(denom)
            p = origin + t[:, None] * dirs
            u = (p - c) @ tang
            v = p[:, 2] - c[2]
        hit = (np.abs(denom) > 1e-12) & (t > T_EPS) & (np.abs(u) <= 0.5 * self.width) & (np.abs(v) <= 0.5 * self.height)
        return np.where(hit, t, np.inf)

    def placed(self, x, y, yaw):
        cx, cy = _rotate_xy(self.center[0], self.center[1], yaw)
        return replace(self, center=(cx + x, cy + y, self.center[2]), yaw=self.yaw + yaw)


def nearest_hit(primitives, origin: np.ndarray, dirs: np.ndarray, cull=None):
    """Nearest hit over a primitive list.

    Returns (t, primitive_index) with t = inf / index -1 on a miss.  `cull`, when
    given, maps a bounding sphere to a boolean or index mask of candidate rays;
    unbounded primitives are always tested against every ray.
    """
    origin = np.asarray(origin, dtype=np.float64)
    best_t = np.full(len(dirs), np.inf)
    best_i = np.full(len(dirs), -1, dtype=np.int64)
    for i, prim in enumerate(primitives):
        sphere = prim.bounding_sphere()
        if sphere is None:
            t = prim.intersect(origin, dirs)
            better = t < best_t
            best_t[better] = t[better]
            best_i[better] = i
            continue
        idx = _sphere_candidates(origin, dirs, *sphere) if cull is None else cull(*sphere)
        if idx is None:
            idx = np.arange(len(dirs))
        if len(idx) == 0:
            continue
        t = prim.intersect(origin, dirs[idx])
        better = t < best_t[idx]
        sel = idx[better]
        best_t[sel] = t[better]
        best_i[sel] = i
    return best_t, best_i


def _sphere_candidates(origin, dirs, center, radius):
    e = center - origin
    dist2 = float(e @ e)
    if dist2 <= radius * radius:
        return None
    tca = dirs @ e
    d2 = dist2 - tca * tca
    return np.flatnonzero((tca > 0.0) & (d2 <= radius * radius * (1.0 + 1e-9) + 1e-12))
