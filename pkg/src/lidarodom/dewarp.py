"""Intra-scan motion compensation: none, constant velocity, or an IMU trajectory.

All methods move points into the sensor frame at the scan stamp (the tau = 0
anchor): a point captured at offset tau is mapped by the relative pose of the
sensor between the stamp and the emission time.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import CoverageGapError
from .geometry import Pose, Trajectory, between, exp, log
from .pointcloud import LidarScan


class DewarpMethod(enum.Enum):
    NONE = "none"
    CONSTANT_VELOCITY = "constant_velocity"
    IMU = "imu"


def dewarp_none(scan: LidarScan) -> LidarScan:
    return scan


def dewarp_constant_velocity(scan: LidarScan, prev_delta: Pose, prev_dt: float) -> LidarScan:
    """Assume the previous twist continued: point at offset tau moves by exp(w * tau).

    ``w`` is the body twist log(prev_delta) / prev_dt, the screw that produced
    the previous pose change, so the interpolation is geodesic rather than
    per-axis linear.
    """
    if prev_dt <= 0:
        raise ValueError("prev_dt must be > 0")
    w = log(prev_delta).scaled(1.0 / prev_dt)
    if np.linalg.norm(w.as_vector()) == 0.0 or len(scan) == 0:
        return scan
    new_positions = np.empty_like(scan.positions)
    # Points share offsets within azimuth columns; transform per unique offset.
    for tau in np.unique(scan.time_offsets):
        idx = scan.time_offsets == tau
        new_positions[idx] = exp(w.scaled(float(tau))).apply_many(scan.positions[idx])
    return LidarScan(
        scan.stamp, scan.period, scan.num_scanlines, new_positions, scan.time_offsets, scan.scanlines
    )


def dewarp_imu(scan: LidarScan, imu_traj: Trajectory) -> LidarScan:
    """Map each point by the relative pose between the stamp and its emission time.

    Poses at intermediate times are geodesically interpolated between the
    bracketing trajectory samples.
    """
    if len(scan) == 0:
        return scan
    t_last = scan.stamp + float(scan.time_offsets.max())
    if not imu_traj.covers(scan.stamp, t_last):
        raise CoverageGapError(
            f"IMU trajectory [{imu_traj.start:.6f}, {imu_traj.end:.6f}] does not cover "
            f"scan interval [{scan.stamp:.6f}, {t_last:.6f}]"
        )
    anchor = imu_traj.pose_at(scan.stamp)
    new_positions = np.empty_like(scan.positions)
    for tau in np.unique(scan.time_offsets):
        idx = scan.time_offsets == tau
        x = between(anchor, imu_traj.pose_at(scan.stamp + float(tau)))
        new_positions[idx] = x.apply_many(scan.positions[idx])
    return LidarScan(
        scan.stamp, scan.period, scan.num_scanlines, new_positions, scan.time_offsets, scan.scanlines
    )
