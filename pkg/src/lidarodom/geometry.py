"""SE(3) pose algebra: composition, relative poses, exp/log, interpolation.

Conventions, fixed repo-wide:
  - Quaternions are scalar-last ``[qx, qy, qz, qw]`` and kept unit-norm.
  - Twists are ``(angular, linear)`` and the residual Jacobians elsewhere
    assume right perturbations ``X * exp(delta)``.
  - Poses map body/LiDAR coordinates into the world frame unless an
    operation says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_SMALL_ANGLE = 1e-8
_LOG_ANGLE_LIMIT = math.pi - 1e-6


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 skew-symmetric matrix such that skew(v) @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def _quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(rv))
    if angle < _SMALL_ANGLE:
        # sin(a/2)/a ~ 1/2 - a^2/48
        s = 0.5 - angle * angle / 48.0
        q = np.array([rv[0] * s, rv[1] * s, rv[2] * s, math.cos(0.5 * angle)])
    else:
        s = math.sin(0.5 * angle) / angle
        q = np.array([rv[0] * s, rv[1] * s, rv[2] * s, math.cos(0.5 * angle)])
    return q / np.linalg.norm(q)


def _quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    if q[3] < 0.0:
        q = -q
    vec_norm = float(np.linalg.norm(q[:3]))
    angle = 2.0 * math.atan2(vec_norm, q[3])
    if vec_norm < _SMALL_ANGLE:
        # angle/sin(angle/2) ~ 2 + angle^2/12
        return q[:3] * (2.0 + angle * angle / 12.0)
    return q[:3] * (angle / vec_norm)


def _matrix_to_quat(m: np.ndarray) -> np.ndarray:
    # Shepperd's method: pick the largest diagonal combination for stability.
    t = np.trace(m)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s, 0.25 * s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s, (m[2, 1] - m[1, 2]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s, (m[0, 2] - m[2, 0]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s, (m[1, 0] - m[0, 1]) / s]
        )
    return q / np.linalg.norm(q)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform in SE(3): unit quaternion (scalar-last) + translation in meters."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        t = np.asarray(self.t, dtype=float)
        if q.shape != (4,) or t.shape != (3,):
            raise ValueError("Pose expects q of shape (4,) and t of shape (3,)")
        n = float(np.linalg.norm(q))
        if not (0.5 < n < 2.0):
            raise ValueError(f"quaternion norm {n} too far from 1 to normalize safely")
        object.__setattr__(self, "q", q / n)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        return Pose(_matrix_to_quat(np.asarray(m)[:3, :3]), np.asarray(m)[:3, 3])

    @staticmethod
    def from_rotvec(rv, t=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(_quat_from_rotvec(np.asarray(rv, dtype=float)), np.asarray(t, dtype=float))

    @property
    def rotation_matrix(self) -> np.ndarray:
        cached = self.__dict__.get("_rot")
        if cached is None:
            cached = _quat_to_matrix(self.q)
            self.__dict__["_rot"] = cached
        return cached

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.t
        return m

    def inverse(self) -> "Pose":
        q_inv = np.array([-self.q[0], -self.q[1], -self.q[2], self.q[3]])
        return Pose(q_inv, -(self.rotation_matrix.T @ self.t))

    def apply(self, p: np.ndarray) -> np.ndarray:
        """Transform one 3-point: R @ p + t."""
        return self.rotation_matrix @ np.asarray(p, dtype=float) + self.t

    def apply_many(self, pts: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        return pts @ self.rotation_matrix.T + self.t

    def rotation_angle(self) -> float:
        """Geodesic rotation angle in [0, pi]."""
        w = abs(float(self.q[3]))
        return 2.0 * math.atan2(float(np.linalg.norm(self.q[:3])), w)

    def __repr__(self):
        q = np.array2string(self.q, precision=6, suppress_small=True)
        t = np.array2string(self.t, precision=6, suppress_small=True)
        return f"Pose(q={q}, t={t})"


@dataclass(frozen=True, eq=False)
class Twist:
    """Tangent-space coordinates of SE(3): angular (rad) and linear (m) parts."""

    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angular", np.asarray(self.angular, dtype=float))
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float))

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    def scaled(self, s: float) -> "Twist":
        return Twist(self.angular * s, self.linear * s)

    def as_vector(self) -> np.ndarray:
        """Stacked [angular, linear], the ordering the solver uses."""
        return np.concatenate([self.angular, self.linear])

    @staticmethod
    def from_vector(v: np.ndarray) -> "Twist":
        v = np.asarray(v, dtype=float)
        return Twist(v[:3], v[3:])


def compose(a: Pose, b: Pose) -> Pose:
    """a then-applied-after b: compose(a, b).apply(p) == a.apply(b.apply(p))."""
    return Pose(_quat_multiply(a.q, b.q), a.rotation_matrix @ b.t + a.t)


def between(a: Pose, b: Pose) -> Pose:
    """Relative pose inverse(a) o b, so compose(a, between(a, b)) == b."""
    return compose(a.inverse(), b)


def transform_point(x: Pose, p: np.ndarray) -> np.ndarray:
    return x.apply(p)


def _so3_left_jacobian(rv: np.ndarray) -> np.ndarray:
    # Taylor below 1e-4: the closed form loses ~theta^-2 digits to the
    # cancellation in (1 - cos), while the truncation error theta^3/24 is
    # still ~4e-14 at the crossover.
    angle = float(np.linalg.norm(rv))
    k = skew(rv)
    k2 = k @ k
    if angle < 1e-4:
        return np.eye(3) + 0.5 * k + k2 / 6.0
    a2 = angle * angle
    return np.eye(3) + ((1.0 - math.cos(angle)) / a2) * k + ((angle - math.sin(angle)) / (a2 * angle)) * k2


def _so3_left_jacobian_inv(rv: np.ndarray) -> np.ndarray:
    # The closed-form coefficient (1 - t*sin/(2(1-cos)))/t^2 cancels two
    # near-ones and is garbage below ~1e-2; the K^2/12 series holds to
    # ~theta^4/720 there, so cross over at 1e-2.
    angle = float(np.linalg.norm(rv))
    k = skew(rv)
    k2 = k @ k
    if angle < 1e-2:
        return np.eye(3) - 0.5 * k + k2 / 12.0
    a2 = angle * angle
    c = (1.0 - (angle * math.sin(angle)) / (2.0 * (1.0 - math.cos(angle)))) / a2
    return np.eye(3) - 0.5 * k + c * k2


def exp(twist: Twist) -> Pose:
    """Closed-form SE(3) exponential (Rodrigues, Taylor fallback near zero)."""
    rv = twist.angular
    return Pose(_quat_from_rotvec(rv), _so3_left_jacobian(rv) @ twist.linear)


def log(x: Pose) -> Twist:
    """Inverse of exp; rejects rotations at or beyond pi - 1e-6 radians."""
    angle = x.rotation_angle()
    if angle >= _LOG_ANGLE_LIMIT:
        raise ValueError(f"log undefined near pi: rotation angle {angle:.9f} rad")
    rv = _quat_to_rotvec(x.q)
    return Twist(rv, _so3_left_jacobian_inv(rv) @ x.t)


def interpolate(a: Pose, b: Pose, alpha: float) -> Pose:
    """Geodesic interpolation a o exp(alpha * log(between(a, b))) for alpha in [0, 1]."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if alpha == 0.0:
        return a
    if alpha == 1.0:
        return b
    return compose(a, exp(log(between(a, b)).scaled(alpha)))


@dataclass(eq=False)
class Trajectory:
    """Stamped pose sequence with strictly increasing stamps (seconds)."""

    stamps: np.ndarray
    poses: list = field(default_factory=list)

    def __post_init__(self):
        self.stamps = np.asarray(self.stamps, dtype=float)
        if len(self.stamps) != len(self.poses):
            raise ValueError("stamps and poses length mismatch")
        if len(self.stamps) > 1 and not np.all(np.diff(self.stamps) > 0):
            bad = int(np.argmin(np.diff(self.stamps)))
            raise ValueError(f"stamps not strictly increasing at index {bad + 1}")

    @staticmethod
    def from_pairs(pairs) -> "Trajectory":
        pairs = list(pairs)
        return Trajectory(np.array([s for s, _ in pairs]), [p for _, p in pairs])

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return zip(self.stamps, self.poses)

    @property
    def start(self) -> float:
        return float(self.stamps[0])

    @property
    def end(self) -> float:
        return float(self.stamps[-1])

    def covers(self, t0: float, t1: float) -> bool:
        return len(self) > 0 and self.start <= t0 and t1 <= self.end

    def pose_at(self, t: float) -> Pose:
        """Pose geodesically interpolated between the bracketing samples."""
        if len(self) == 0:
            raise ValueError("empty trajectory")
        if not self.start <= t <= self.end:
            raise ValueError(
                f"stamp {t:.9f} outside trajectory range [{self.start:.9f}, {self.end:.9f}]"
            )
        i = int(np.searchsorted(self.stamps, t, side="right")) - 1
        if i >= len(self) - 1:
            return self.poses[-1]
        t0, t1 = self.stamps[i], self.stamps[i + 1]
        if t == t0:
            return self.poses[i]
        return interpolate(self.poses[i], self.poses[i + 1], (t - t0) / (t1 - t0))
