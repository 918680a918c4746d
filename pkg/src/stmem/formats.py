"""Binary sequence / label files plus PLY and PPM debug exports.

Sequence file (little-endian), version 1::

    magic      4s   b"STMS"
    version    u16
    C, H, W    3 x u32        label-image shape; H = W = 0 means no images
    n_sweeps   u32
    per sweep:
      pose       12 x f64     rotation row-major, then translation (sensor -> world)
      timestamp  f64
      n_points   u32
      points     n_points x 4 x f32   x, y, z, intensity (sensor frame)
      labels     H x W x C x f32      segmenter class probabilities

Label file (little-endian), version 1::

    magic      4s   b"STMG"
    version    u16
    key_frame  i32            -1 when unknown
    n_sweeps   u32
    per sweep:
      n_points   u32
      capture    n_points x u8   class at capture time
      keyframe   n_points x u8   class of that location at the key frame

Point coordinates are float32 on disk; the simulator quantises its output to
float32 so that a write/read cycle is lossless.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .core import NUM_CLASSES, Pose, Sweep

SEQUENCE_MAGIC = b"STMS"
LABEL_MAGIC = b"STMG"
SEQUENCE_VERSION = 1
LABEL_VERSION = 1

CLASS_COLORS = np.array(
    [
        [128, 128, 128],  # background
        [40, 200, 60],  # traffic sign
        [255, 140, 0],  # construction
    ],
    dtype=np.uint8,
)


class FormatError(ValueError):
    pass


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError("unexpected end of file")
    return data


def write_sequence(path, sweeps: list[Sweep], num_classes: int = NUM_CLASSES) -> None:
    shapes = {s.label_image.shape for s in sweeps if s.label_image is not None}
    if any(s.label_image is None for s in sweeps):
        if shapes:
            raise FormatError("either every sweep carries a label image or none does")
        h = w = 0
    else:
        if len(shapes) > 1:
            raise FormatError(f"label images differ in shape: {shapes}")
        h, w, c = shapes.pop() if shapes else (0, 0, num_classes)
        if c != num_classes:
            raise FormatError(f"label image has {c} classes, expected {num_classes}")
    buf = io.BytesIO()
    buf.write(SEQUENCE_MAGIC)
    buf.write(struct.pack("<HIIII", SEQUENCE_VERSION, num_classes, h, w, len(sweeps)))
    for s in sweeps:
        buf.write(np.asarray(s.pose.as_array(), dtype="<f8").tobytes())
        buf.write(struct.pack("<dI", float(s.timestamp), len(s)))
        pts = np.empty((len(s), 4), dtype="<f4")
        pts[:, :3] = s.points
        pts[:, 3] = s.intensity
        buf.write(pts.tobytes())
        if h:
            buf.write(np.ascontiguousarray(s.label_image, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_sequence(path) -> tuple[list[Sweep], int]:
    """Return (sweeps, num_classes)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != SEQUENCE_MAGIC:
            raise FormatError(f"{path}: not a sequence file")
        version, c, h, w, n = struct.unpack("<HIIII", _read_exact(fh, 18))
        if version != SEQUENCE_VERSION:
            raise FormatError(f"{path}: unsupported sequence version {version}")
        sweeps = []
        for _ in range(n):
            pose = Pose.from_array(np.frombuffer(_read_exact(fh, 96), dtype="<f8"))
            timestamp, count = struct.unpack("<dI", _read_exact(fh, 12))
            pts = np.frombuffer(_read_exact(fh, 16 * count), dtype="<f4").reshape(count, 4)
            image = None
            if h:
                image = (
                    np.frombuffer(_read_exact(fh, 4 * h * w * c), dtype="<f4")
                    .reshape(h, w, c)
                    .astype(np.float32)
                )
            sweeps.append(Sweep(pts[:, :3].astype(np.float64), pts[:, 3].astype(np.float64), pose, timestamp, image))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes")
    return sweeps, c


def write_labels(path, capture: list[np.ndarray], keyframe: list[np.ndarray] | None = None, key_frame: int = -1) -> None:
    if keyframe is None:
        keyframe = capture
    if len(capture) != len(keyframe):
        raise FormatError("capture and keyframe label lists differ in length")
    buf = io.BytesIO()
    buf.write(LABEL_MAGIC)
    buf.write(struct.pack("<HiI", LABEL_VERSION, key_frame, len(capture)))
    for a, b in zip(capture, keyframe):
        a = np.asarray(a)
        b = np.asarray(b)
        if a.shape != b.shape:
            raise FormatError("capture and keyframe labels differ in length")
        if len(a) and (a.min() < 0 or a.max() > 255 or b.min() < 0 or b.max() > 255):
            raise FormatError("labels must fit in u8")
        buf.write(struct.pack("<I", len(a)))
        buf.write(a.astype("u1").tobytes())
        buf.write(b.astype("u1").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_labels(path) -> tuple[list[np.ndarray], list[np.ndarray], int]:
    """Return (capture_labels, keyframe_labels, key_frame_index)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != LABEL_MAGIC:
            raise FormatError(f"{path}: not a label file")
        version, key, n = struct.unpack("<HiI", _read_exact(fh, 10))
        if version != LABEL_VERSION:
            raise FormatError(f"{path}: unsupported label version {version}")
        capture, keyframe = [], []
        for _ in range(n):
            (count,) = struct.unpack("<I", _read_exact(fh, 4))
            capture.append(np.frombuffer(_read_exact(fh, count), dtype="u1").astype(np.int64))
            keyframe.append(np.frombuffer(_read_exact(fh, count), dtype="u1").astype(np.int64))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes")
    return capture, keyframe, key


def write_ply(path, points: np.ndarray, labels: np.ndarray | None = None, colors: np.ndarray | None = None) -> None:
    """ASCII PLY with per-vertex RGB, coloured by class when labels are given."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if colors is None:
        if labels is None:
            labels = np.zeros(len(points), dtype=np.int64)
        labels = np.asarray(labels)
        palette = CLASS_COLORS
        if labels.size and labels.max() >= len(palette):
            extra = np.full((labels.max() + 1 - len(palette), 3), 255, dtype=np.uint8)
            palette = np.concatenate([palette, extra])
        colors = palette[labels]
    colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    lines = [
        "ply",
        "format ascii 1.0",
        "comment stmem point export v1",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    body = [f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}" for p, c in zip(points, colors)]
    Path(path).write_text("\n".join(lines + body) + "\n")


def read_ply(path) -> tuple[np.ndarray, np.ndarray]:
    """Read back a file written by write_ply; returns (points, colors)."""
    text = Path(path).read_text().splitlines()
    if not text or text[0] != "ply":
        raise FormatError(f"{path}: not a PLY file")
    n = None
    i = 0
    for i, line in enumerate(text):
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
        if line == "end_header":
            break
    if n is None:
        raise FormatError(f"{path}: missing vertex count")
    rows = [line.split() for line in text[i + 1 : i + 1 + n]]
    data = np.array(rows, dtype=np.float64).reshape(-1, 6)
    return data[:, :3], data[:, 3:].astype(np.uint8)


def write_ppm(path, image: np.ndarray, vmax: float | None = None) -> None:
    """Binary PPM (P6) of a 2-D float image, grey level proportional to value.

    Non-finite cells are written black.
    """
    image = np.asarray(image, dtype=np.float64)
    finite = np.isfinite(image)
    if vmax is None:
        vmax = float(image[finite].max()) if finite.any() else 1.0
    scale = 255.0 / vmax if vmax > 0 else 0.0
    grey = np.zeros(image.shape, dtype=np.uint8)
    grey[finite] = np.clip(np.rint(image[finite] * scale), 0, 255).astype(np.uint8)
    h, w = grey.shape
    rgb = np.repeat(grey[:, :, None], 3, axis=2)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)
