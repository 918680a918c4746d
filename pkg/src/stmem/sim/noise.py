"""Noisy stand-in for an image segmenter."""

from __future__ import annotations

import numpy as np

from ..core import NUM_CLASSES
from .scenario import NoiseConfig


def flip_probability(depth: np.ndarray, cfg: NoiseConfig) -> np.ndarray:
    """p0 + p1 * min(d / d_max, 1); pixels with no surface count as d = d_max."""
    d = np.where(np.isfinite(depth), depth, cfg.d_max)
    return np.clip(cfg.p0 + cfg.p1 * np.minimum(d / cfg.d_max, 1.0), 0.0, 1.0)


def corrupt_segmentation(
    true_ids: np.ndarray,
    depth: np.ndarray,
    cfg: NoiseConfig,
    rng: np.random.Generator,
    num_classes: int = NUM_CLASSES,
) -> np.ndarray:
    """Turn a perfect class-id image into a noisy (H, W, C) float32 probability image.

    Three effects, applied in order:
      1. misalignment: the whole id image is shifted by a random integer offset of
         at most `jitter_px` per axis (edge pixels replicate), which only changes
         pixels near object boundaries;
      2. flips: each pixel is relabelled to a uniformly chosen other class with
         probability `flip_probability(depth)`; with `blob_px > 1` the draws are
         shared by blob_px x blob_px tiles so errors come in patches;
      3. softening: p = (1 - softening) * onehot + softening / C.
    """
    true_ids = np.asarray(true_ids)
    depth = np.asarray(depth, dtype=np.float64)
    if true_ids.shape != depth.shape:
        raise ValueError("id and depth images differ in shape")
    h, w = true_ids.shape
    ids = true_ids.astype(np.int64)

    j = int(cfg.jitter_px)
    if j > 0:
        dx, dy = rng.integers(-j, j + 1, size=2)
        rows = np.clip(np.arange(h) + dy, 0, h - 1)
        cols = np.clip(np.arange(w) + dx, 0, w - 1)
        ids = ids[rows[:, None], cols[None, :]]
        depth = depth[rows[:, None], cols[None, :]]

    p = flip_probability(depth, cfg)
    if np.any(p > 0):
        b = int(cfg.blob_px)
        bh, bw = -(-h // b), -(-w // b)
        u = rng.random((bh, bw))
        shift = rng.integers(1, num_classes, size=(bh, bw))
        if b > 1:
            u = np.repeat(np.repeat(u, b, axis=0), b, axis=1)[:h, :w]
            shift = np.repeat(np.repeat(shift, b, axis=0), b, axis=1)[:h, :w]
        flip = u < p
        ids = np.where(flip, (ids + shift) % num_classes, ids)

    a = np.float32(cfg.softening)
    out = np.full((h, w, num_classes), a / np.float32(num_classes), dtype=np.float32)
    np.put_along_axis(out, ids[..., None], (np.float32(1.0) - a) + a / np.float32(num_classes), axis=-1)
    return out
