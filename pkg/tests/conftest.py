"""Shared synthetic-world helpers for registration, pipeline and acceptance tests."""

import numpy as np
import pytest

from lidarodom.features import CurvatureMethod, FeatureParams, classify
from lidarodom.geometry import Pose, Twist
from lidarodom.pointcloud import PreprocessParams, preprocess
from lidarodom.synthworld import LidarModel, Pole, ScrewTrajectory, box_room, simulate_scan

# steep vertical FOV so box-room scans include solid floor/ceiling coverage
# (otherwise no planar normals constrain z and the normal equations degenerate)
DEFAULT_MODEL = LidarModel(
    num_scanlines=16,
    points_per_line=256,
    vertical_fov=(np.radians(-28.0), np.radians(28.0)),
)


def room_scene():
    return box_room((6.0, 5.0, 2.0), poles=[Pole([3.0, 2.0, -2.0], [0, 0, 1], 0.3, 4.0)])


def scan_at(pose, scene=None, model=DEFAULT_MODEL, noise=0.0, seed=0):
    """Preprocessed static scan taken from ``pose`` in ``scene``."""
    scene = scene if scene is not None else room_scene()
    traj = ScrewTrajectory(pose, Twist.zero())
    rng = np.random.default_rng(seed) if noise > 0 else None
    scan, _ = simulate_scan(scene, traj, 0.0, model, warp=False, rng=rng, range_noise=noise)
    return preprocess(scan, PreprocessParams())


# noise-free synthetic scans warrant a tight plane-fit gate: any junction
# contamination is then rejected and surviving normals are exact
EXACT_PARAMS = FeatureParams(normal_fit_rms=1e-4)


def extract(scan, method=CurvatureMethod.CLASSICAL, params=None):
    return classify(scan, params if params is not None else FeatureParams(), method)


def extract_exact(scan, method=CurvatureMethod.CLASSICAL):
    return classify(scan, EXACT_PARAMS, method)


def random_delta(rng, max_trans=0.3, max_angle_deg=5.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.radians(max_angle_deg))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    dist = rng.uniform(0.0, max_trans)
    return Pose.from_rotvec(axis * angle, direction * dist)
