"""Trajectory drift metrics: ATE, RTE, windowed RTE and percent change.

Relative poses use a ominus b = between(a, b) = inverse(a) o b. ATE is
computed without global alignment by default (scan-to-scan odometry shares
the ground-truth start frame through its first pose); an optional first-pose
alignment is available and changes ATE values, so callers must ask for it
explicitly. RTE is the windowed metric at j = 1, sharing one code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssociationError
from .geometry import Pose, Trajectory, between, compose


@dataclass(eq=False)
class PairedTrajectory:
    """Ground-truth and estimated poses associated at common stamps."""

    stamps: np.ndarray
    gt: list
    est: list

    def __len__(self):
        return len(self.gt)


@dataclass(frozen=True)
class MetricsReport:
    ate_trans: float
    rte_trans: float
    wrte_trans: float
    ate_rot: float
    rte_rot: float
    wrte_rot: float
    window_seconds: float
    window_steps: int


def associate(gt: Trajectory, est: Trajectory, max_dt: float) -> PairedTrajectory:
    """Pair every estimate stamp with the gt pose interpolated to that stamp.

    Pairs whose distance to the nearest gt sample exceeds max_dt are dropped;
    stamps outside the gt time range cannot be interpolated and are dropped
    too. Zero surviving pairs is an association error.
    """
    stamps, gt_poses, est_poses = [], [], []
    for stamp, pose in est:
        if not gt.start <= stamp <= gt.end:
            continue
        nearest = np.abs(gt.stamps - stamp).min()
        if nearest > max_dt:
            continue
        stamps.append(stamp)
        gt_poses.append(gt.pose_at(float(stamp)))
        est_poses.append(pose)
    if not stamps:
        raise AssociationError(
            f"no pairs within max_dt={max_dt}: gt covers [{gt.start:.3f}, {gt.end:.3f}], "
            f"estimate covers [{est.start:.3f}, {est.end:.3f}]"
        )
    return PairedTrajectory(np.array(stamps), gt_poses, est_poses)


def align_first_pose(paired: PairedTrajectory) -> PairedTrajectory:
    """Rigidly move the estimate so its first pose coincides with the gt one."""
    g = compose(paired.gt[0], paired.est[0].inverse())
    return PairedTrajectory(paired.stamps, paired.gt, [compose(g, p) for p in paired.est])


def _pose_errors(paired: PairedTrajectory) -> list[Pose]:
    return [between(g, e) for g, e in zip(paired.gt, paired.est)]


def ate_translation(paired: PairedTrajectory) -> float:
    errs = [np.linalg.norm(d.t) for d in _pose_errors(paired)]
    return float(np.sqrt(np.mean(np.square(errs))))


def ate_rotation(paired: PairedTrajectory) -> float:
    errs = [d.rotation_angle() for d in _pose_errors(paired)]
    return float(np.sqrt(np.mean(np.square(errs))))


def _window_deltas(paired: PairedTrajectory, j: int) -> list[Pose]:
    n = len(paired)
    if j < 1:
        raise ValueError("window step j must be >= 1")
    if n <= j:
        raise ValueError(f"trajectory has {n} poses, need more than j={j}")
    out = []
    for i in range(n - j):
        d_gt = between(paired.gt[i], paired.gt[i + j])
        d_est = between(paired.est[i], paired.est[i + j])
        out.append(between(d_gt, d_est))
    return out


def wrte_translation(paired: PairedTrajectory, j: int) -> float:
    errs = [np.linalg.norm(d.t) for d in _window_deltas(paired, j)]
    return float(np.sqrt(np.mean(np.square(errs))))


def wrte_rotation(paired: PairedTrajectory, j: int) -> float:
    errs = [d.rotation_angle() for d in _window_deltas(paired, j)]
    return float(np.sqrt(np.mean(np.square(errs))))


def rte_translation(paired: PairedTrajectory) -> float:
    return wrte_translation(paired, 1)


def rte_rotation(paired: PairedTrajectory) -> float:
    return wrte_rotation(paired, 1)


def percent_change(a: float, b: float) -> float:
    """C = 100 (a - b) / b against base case b > 0."""
    if b <= 0:
        raise ValueError("percent change needs a positive base value")
    return 100.0 * (a - b) / b


def window_steps(stamps, window_seconds: float) -> int:
    """Window length in steps: the window time at the median scan rate, >= 1."""
    stamps = np.asarray(stamps, dtype=float)
    if stamps.size < 2:
        return 1
    median_dt = float(np.median(np.diff(stamps)))
    if median_dt <= 0:
        return 1
    return max(1, round(window_seconds / median_dt))


def compute_report(paired: PairedTrajectory, window_seconds: float) -> MetricsReport:
    j = min(window_steps(paired.stamps, window_seconds), len(paired) - 1)
    return MetricsReport(
        ate_trans=ate_translation(paired),
        rte_trans=rte_translation(paired),
        wrte_trans=wrte_translation(paired, j),
        ate_rot=ate_rotation(paired),
        rte_rot=rte_rotation(paired),
        wrte_rot=wrte_rotation(paired, j),
        window_seconds=window_seconds,
        window_steps=j,
    )
