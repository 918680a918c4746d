"""Spatio-temporal point memory for LiDAR/camera segmentation."""

__version__ = "0.1.0"
