"""Polar depth raster of the current sweep and per-point occlusion scores."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Pose, Sweep, cart_to_polar_array
from .formats import write_ppm

EMPTY = np.inf
MEASURED = 1
INTERPOLATED = 2
UNFILLED = 0
NEUTRAL = 0.0
PITCH_TOL = 1e-6
DEFAULT_FILL_RADIUS = 2


@dataclass
class DepthRaster:
    """Pitch x azimuth grid of minimum ranges; EMPTY (inf) where nothing landed.

    Rows follow the configured beam pitches (edges at midpoints between beams);
    column c is centred on azimuth c * azimuth_step.
    """

    ranges: np.ndarray  # (B, ncols)
    provenance: np.ndarray  # (B, ncols) uint8
    pitches: np.ndarray  # (B,) ascending beam pitches
    azimuth_step: float
    max_range: float

    @property
    def shape(self):
        return self.ranges.shape

    @property
    def pitch_edges(self) -> np.ndarray:
        return 0.5 * (self.pitches[1:] + self.pitches[:-1])

    def cells(self, polar: np.ndarray):
        """(row, col, inside) for (N, 3) polar coordinates."""
        ncols = self.ranges.shape[1]
        pitch = polar[:, 2]
        inside = (pitch >= self.pitches[0] - PITCH_TOL) & (pitch <= self.pitches[-1] + PITCH_TOL) & (polar[:, 0] > 0)
        row = np.searchsorted(self.pitch_edges, pitch, side="right")
        col = np.floor(polar[:, 1] / self.azimuth_step + 0.5).astype(np.int64) % ncols
        return row, col, inside

    def export_ppm(self, path) -> None:
        img = np.where(np.isfinite(self.ranges), self.ranges, np.nan)
        # highest pitch on top
        write_ppm(path, img[::-1], vmax=self.max_range)


def raster_columns(azimuth_step: float) -> int:
    return int(math.ceil(2 * math.pi / azimuth_step - 1e-9))


def build_depth_raster(sweep: Sweep | np.ndarray, lidar) -> DepthRaster:
    """Minimum range per (pitch, azimuth) cell over the current sweep's points.

    `sweep` may be a Sweep or a sensor-frame (N, 3) array; `lidar` is a LidarConfig.
    """
    points = sweep.points if isinstance(sweep, Sweep) else np.asarray(sweep, dtype=np.float64).reshape(-1, 3)
    pitches = np.sort(np.asarray(lidar.pitches, dtype=np.float64))
    ncols = raster_columns(lidar.azimuth_step)
    ranges = np.full((len(pitches), ncols), EMPTY)
    raster = DepthRaster(ranges, np.zeros(ranges.shape, dtype=np.uint8), pitches, lidar.azimuth_step, lidar.max_range)
    if len(points):
        polar = cart_to_polar_array(points)
        row, col, inside = raster.cells(polar)
        r = np.minimum(polar[:, 0], lidar.max_range)
        np.minimum.at(ranges, (row[inside], col[inside]), r[inside])
    raster.provenance[np.isfinite(ranges)] = MEASURED
    return raster


def fill_gaps(raster: DepthRaster, max_radius_cells: int = DEFAULT_FILL_RADIUS) -> DepthRaster:
    """Nearest-measured-cell interpolation of EMPTY cells.

    Candidates lie within Chebyshev distance `max_radius_cells`; among them the
    smallest Euclidean cell distance wins, then the smallest range.  Azimuth
    wraps, pitch does not.  Measured cells are never altered.
    """
    ranges = raster.ranges.copy()
    prov = raster.provenance.copy()
    measured = raster.provenance == MEASURED
    src = np.where(measured, raster.ranges, EMPTY)
    rows, cols = src.shape
    R = int(max_radius_cells)
    offsets = [(dr, dc) for dr in range(-R, R + 1) for dc in range(-R, R + 1) if (dr, dc) != (0, 0)]
    by_dist: dict[int, list] = {}
    for dr, dc in offsets:
        by_dist.setdefault(dr * dr + dc * dc, []).append((dr, dc))
    open_cells = ~measured
    for d2 in sorted(by_dist):
        if not open_cells.any():
            break
        best = np.full(src.shape, EMPTY)
        for dr, dc in by_dist[d2]:
            shifted = np.roll(src, -dc, axis=1)
            if dr > 0:
                shifted = np.concatenate([shifted[dr:], np.full((dr, cols), EMPTY)])
            elif dr < 0:
                shifted = np.concatenate([np.full((-dr, cols), EMPTY), shifted[: rows + dr]])
            np.minimum(best, shifted, out=best)
        take = open_cells & np.isfinite(best)
        ranges[take] = best[take]
        prov[take] = INTERPOLATED
        open_cells &= ~take
    return DepthRaster(ranges, prov, raster.pitches, raster.azimuth_step, raster.max_range)


def occlusion_scores(raster: DepthRaster, world_points: np.ndarray, ego_pose: Pose) -> np.ndarray:
    """Raster range minus point range along each point's current viewing direction.

    Positive: the current sweep sees past the point.  Near zero: re-observed.
    Negative: something nearer hides it.  Points outside beam coverage or on
    EMPTY cells score NEUTRAL (0).
    """
    world_points = np.asarray(world_points, dtype=np.float64).reshape(-1, 3)
    out = np.full(len(world_points), NEUTRAL)
    if not len(world_points):
        return out
    polar = cart_to_polar_array(ego_pose.apply_inverse(world_points))
    row, col, inside = raster.cells(polar)
    idx = np.flatnonzero(inside)
    cell = raster.ranges[row[idx], col[idx]]
    ok = np.isfinite(cell)
    out[idx[ok]] = cell[ok] - polar[idx[ok], 0]
    return out


def occlusion_score(raster: DepthRaster, point, ego_pose: Pose) -> float:
    return float(occlusion_scores(raster, np.asarray(point, dtype=np.float64).reshape(1, 3), ego_pose)[0])
