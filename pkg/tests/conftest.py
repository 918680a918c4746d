import sys

import numpy as np
import pytest

from stmem.core import Pose, Sweep, one_hot
from stmem.fusion import CameraModel
from stmem.sim.scenario import CameraConfig, LidarConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def camera():
    return CameraModel.from_config(CameraConfig(width=64, height=40, hfov_deg=70.0))


@pytest.fixture
def lidar():
    return LidarConfig()


def random_pose(rng, scale=20.0):
    return Pose.from_xyz_yaw(*rng.uniform(-scale, scale, 3), rng.uniform(-np.pi, np.pi))


def label_image_for(ids: np.ndarray, num_classes=3) -> np.ndarray:
    return one_hot(ids, num_classes)


def make_sweep(points, pose=None, image=None, intensity=None):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if intensity is None:
        intensity = np.full(len(points), 0.5)
    return Sweep(points, intensity, pose or Pose.identity(), 0.0, image)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
