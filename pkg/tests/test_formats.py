import numpy as np
import pytest

from stmem.core import Pose, Sweep
from stmem.formats import CLASS_COLORS, FormatError, read_labels, read_ply, read_ppm, read_sequence, write_labels, write_ply, write_ppm, write_sequence

from conftest import random_pose


def _sweeps(rng, n=3, images=True):
    out = []
    for i in range(n):
        pts = rng.normal(scale=10, size=(20 + i, 3)).astype(np.float32).astype(np.float64)
        inten = rng.random(len(pts)).astype(np.float32).astype(np.float64)
        img = rng.random((4, 5, 3)).astype(np.float32) if images else None
        out.append(Sweep(pts, inten, random_pose(rng), 0.1 * i, img))
    return out


def test_sequence_roundtrip(tmp_path, rng):
    sweeps = _sweeps(rng)
    write_sequence(tmp_path / "a.stms", sweeps)
    back, c = read_sequence(tmp_path / "a.stms")
    assert c == 3 and len(back) == 3
    for a, b in zip(sweeps, back):
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.intensity, b.intensity)
        assert a.pose == b.pose and a.timestamp == b.timestamp
        assert np.array_equal(a.label_image, b.label_image)


def test_sequence_without_images(tmp_path, rng):
    write_sequence(tmp_path / "a.stms", _sweeps(rng, images=False))
    back, _ = read_sequence(tmp_path / "a.stms")
    assert all(s.label_image is None for s in back)


def test_sequence_corruption(tmp_path, rng):
    path = tmp_path / "a.stms"
    write_sequence(path, _sweeps(rng))
    data = path.read_bytes()
    (tmp_path / "bad.stms").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        read_sequence(tmp_path / "bad.stms")
    (tmp_path / "short.stms").write_bytes(data[:-7])
    with pytest.raises(FormatError):
        read_sequence(tmp_path / "short.stms")
    (tmp_path / "long.stms").write_bytes(data + b"\0")
    with pytest.raises(FormatError):
        read_sequence(tmp_path / "long.stms")


def test_mixed_images_rejected(tmp_path, rng):
    sweeps = _sweeps(rng)
    sweeps[1].label_image = None
    with pytest.raises(FormatError):
        write_sequence(tmp_path / "a.stms", sweeps)


def test_labels_roundtrip(tmp_path, rng):
    cap = [rng.integers(0, 3, n) for n in (5, 0, 7)]
    kf = [rng.integers(0, 3, len(c)) for c in cap]
    write_labels(tmp_path / "a.stmg", cap, kf, key_frame=2)
    c2, k2, key = read_labels(tmp_path / "a.stmg")
    assert key == 2
    assert all(np.array_equal(a, b) for a, b in zip(cap, c2))
    assert all(np.array_equal(a, b) for a, b in zip(kf, k2))
    with pytest.raises(FormatError):
        write_labels(tmp_path / "b.stmg", cap, kf[:2])


def test_ply_roundtrip(tmp_path, rng):
    pts = rng.normal(size=(30, 3))
    lab = rng.integers(0, 3, 30)
    write_ply(tmp_path / "a.ply", pts, lab)
    p2, colors = read_ply(tmp_path / "a.ply")
    assert np.abs(p2 - pts).max() <= 5e-7
    assert np.array_equal(colors, CLASS_COLORS[lab])


def test_ppm_roundtrip(tmp_path):
    img = np.array([[0.0, 5.0], [10.0, np.nan]])
    write_ppm(tmp_path / "a.ppm", img, vmax=10.0)
    back = read_ppm(tmp_path / "a.ppm")
    assert back.shape == (2, 2, 3)
    assert back[0, 0, 0] < back[0, 1, 0] < back[1, 0, 0]
