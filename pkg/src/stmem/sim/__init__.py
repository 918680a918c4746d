"""Deterministic synthetic world: LiDAR, camera, noisy segmenter, scenarios."""

from .geometry import Box, Cone, Cylinder, GroundPlane, Rectangle, nearest_hit
from .noise import corrupt_segmentation, flip_probability
from .scenario import (
    Actor,
    CameraConfig,
    EgoTrajectory,
    LidarConfig,
    NoiseConfig,
    Scenario,
    ScenarioError,
    load_scenario,
    scenario_from_dict,
)
from .sensors import RaycastResult, raycast_sweep, render_label_image
from .sequence import LabeledSequence, generate_sequence, sample_frame_times
