"""Forward integration of IMU measurements into a stamped pose trajectory.

Biases and the starting velocity are supplied (held constant over a window);
measurements are zero-order held between stamps and the rotation increment is
exact (exponential of the scaled gyro rate).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageGapError
from .geometry import Pose, Trajectory, Twist, compose, exp

_DEFAULT_GRAVITY = (0.0, 0.0, -9.81)


@dataclass(frozen=True, eq=False)
class ImuMeasurement:
    stamp: float
    angular_velocity: np.ndarray
    linear_acceleration: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angular_velocity", np.asarray(self.angular_velocity, dtype=float))
        object.__setattr__(
            self, "linear_acceleration", np.asarray(self.linear_acceleration, dtype=float)
        )


@dataclass(eq=False)
class ImuState:
    """Pose (body->world), world-frame velocity, constant biases and gravity."""

    pose: Pose = field(default_factory=Pose.identity)
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: np.ndarray = field(default_factory=lambda: np.array(_DEFAULT_GRAVITY))

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.gyro_bias = np.asarray(self.gyro_bias, dtype=float)
        self.accel_bias = np.asarray(self.accel_bias, dtype=float)
        self.gravity = np.asarray(self.gravity, dtype=float)


@dataclass(eq=False)
class ImuIntegration:
    """Integration output: stamped poses plus the final full state (for chaining)."""

    trajectory: Trajectory
    final_state: ImuState


def _check_coverage(stamps: np.ndarray, t0: float, t1: float) -> None:
    if stamps.size == 0:
        raise CoverageGapError(f"no IMU measurements cover [{t0:.6f}, {t1:.6f}]")
    diffs = np.diff(stamps)
    median_dt = float(np.median(diffs)) if diffs.size else t1 - t0
    limit = 2.0 * median_dt if median_dt > 0 else np.inf
    if stamps[0] - t0 > limit:
        raise CoverageGapError(
            f"IMU gap [{t0:.6f}, {stamps[0]:.6f}] at window start exceeds 2x median period"
        )
    if t1 - stamps[-1] > limit:
        raise CoverageGapError(
            f"IMU gap [{stamps[-1]:.6f}, {t1:.6f}] at window end exceeds 2x median period"
        )
    inside = (stamps >= t0) & (stamps <= t1)
    s = stamps[inside]
    if s.size > 1:
        gaps = np.diff(s)
        bad = np.nonzero(gaps > limit)[0]
        if bad.size:
            i = int(bad[0])
            raise CoverageGapError(
                f"IMU gap [{s[i]:.6f}, {s[i + 1]:.6f}] exceeds 2x median period {median_dt:.6f}"
            )


def _step(state: ImuState, meas: ImuMeasurement, dt: float) -> ImuState:
    r = state.pose.rotation_matrix
    accel_world = r @ (meas.linear_acceleration - state.accel_bias) + state.gravity
    omega = meas.angular_velocity - state.gyro_bias
    new_pose = Pose(
        compose(state.pose, exp(Twist(omega * dt, np.zeros(3)))).q,
        state.pose.t + state.velocity * dt + 0.5 * accel_world * dt * dt,
    )
    return ImuState(
        pose=new_pose,
        velocity=state.velocity + accel_world * dt,
        gyro_bias=state.gyro_bias,
        accel_bias=state.accel_bias,
        gravity=state.gravity,
    )


def integrate(
    state: ImuState, measurements, t0: float, t1: float
) -> ImuIntegration:
    """Integrate measurements over [t0, t1] starting from ``state`` at t0.

    Returns a pose at t0, at every measurement stamp strictly inside the
    window, and at t1. Measurements are zero-order held, so the value applied
    on [a, b) is the one stamped at or before ``a`` (the first measurement is
    held backwards across an initial gap of at most 2x the median period).
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    measurements = sorted(measurements, key=lambda m: m.stamp)
    stamps = np.array([m.stamp for m in measurements])
    if stamps.size > 1 and np.any(np.diff(stamps) <= 0):
        raise ValueError("IMU stamps must be strictly increasing")
    if t1 == t0:
        return ImuIntegration(Trajectory(np.array([t0]), [state.pose]), state)
    _check_coverage(stamps, t0, t1)

    # Breakpoints: window ends plus interior measurement stamps.
    interior = stamps[(stamps > t0) & (stamps < t1)]
    ticks = np.concatenate([[t0], interior, [t1]])

    out_stamps = [t0]
    out_poses = [state.pose]
    current = state
    for a, b in zip(ticks[:-1], ticks[1:]):
        i = int(np.searchsorted(stamps, a, side="right")) - 1
        meas = measurements[max(i, 0)]
        current = _step(current, meas, float(b - a))
        out_stamps.append(float(b))
        out_poses.append(current.pose)
    return ImuIntegration(Trajectory(np.array(out_stamps), out_poses), current)
