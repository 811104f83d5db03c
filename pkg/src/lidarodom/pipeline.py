"""The odometry engine: chain scan-to-scan solves over a sequence, evaluate
drift, and run sweep grids over component choices.

So that component comparisons are not confounded by velocity/bias estimation
quality, the quantities a full system would estimate online are fed from
ground truth: constant-velocity dewarping uses the gt delta of the previous
interval (configurable to the estimate), IMU-based components anchor on the
gt pose with a finite-difference gt world velocity and manifest-supplied
biases. Odometry itself stays scan-to-scan: the estimated trajectory composes
solved deltas from the gt start pose.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, InitChoice
from .dataio import Dataset, ImuMeta, ResultRow, load_dataset
from .dewarp import DewarpMethod, dewarp_constant_velocity, dewarp_imu, dewarp_none
from .errors import ConfigError
from .features import apply_feature_set, classify
from .geometry import Pose, Trajectory, between, compose
from .imu import ImuState, integrate
from .metrics import MetricsReport, associate, compute_report
from .pointcloud import LidarScan, PreprocessParams, preprocess
from .registration import init_constant_velocity, solve

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A module error during sequence processing, tagged with the scan index."""

    def __init__(self, scan_index: int, message: str):
        super().__init__(f"scan {scan_index}: {message}")
        self.scan_index = scan_index


@dataclass(eq=False)
class RunStats:
    runtime_ms_per_scan: float = 0.0
    iterations_mean: float = 0.0
    skipped_scans: list = field(default_factory=list)


@dataclass(eq=False)
class RunOutput:
    trajectory: Trajectory
    report: MetricsReport
    stats: RunStats


def _gt_world_velocity(gt: Trajectory, t: float, h: float) -> np.ndarray:
    t0 = max(gt.start, t - h)
    t1 = min(gt.end, t + h)
    if t1 <= t0:
        return np.zeros(3)
    return (gt.pose_at(t1).t - gt.pose_at(t0).t) / (t1 - t0)


def _imu_state_at(gt: Trajectory, t: float, imu_meta: ImuMeta | None, h: float) -> ImuState:
    meta = imu_meta if imu_meta is not None else ImuMeta(rate=0.0)
    return ImuState(
        pose=gt.pose_at(t),
        velocity=_gt_world_velocity(gt, t, h),
        gyro_bias=meta.gyro_bias.copy(),
        accel_bias=meta.accel_bias.copy(),
        gravity=meta.gravity.copy(),
    )


def _rotate_imu_measurements(measurements, imu_meta: ImuMeta | None):
    """Express IMU measurements in the LiDAR frame via the manifest extrinsic.

    Rotation only; the accelerometer lever arm is out of scope and documented
    as such in the manifest format.
    """
    if imu_meta is None:
        return measurements
    r = imu_meta.extrinsic.rotation_matrix
    if np.allclose(r, np.eye(3), atol=1e-15):
        return measurements
    from .imu import ImuMeasurement

    return [
        ImuMeasurement(m.stamp, r.T @ m.angular_velocity, r.T @ m.linear_acceleration)
        for m in measurements
    ]


def _validate_inputs(config: ExperimentConfig, imu_measurements, gt: Trajectory) -> None:
    needs_imu = config.init == InitChoice.IMU or config.dewarp is DewarpMethod.IMU
    if needs_imu and not imu_measurements:
        raise ConfigError(
            "config requests IMU initialization or dewarping but the dataset has no IMU stream"
        )
    needs_gt = (
        config.init in (InitChoice.GROUND_TRUTH, InitChoice.IMU)
        or config.dewarp is not DewarpMethod.NONE
        or config.init_motion_source == "ground_truth"
    )
    if needs_gt and gt is None:
        raise ConfigError("config requires a ground-truth trajectory")


def _dewarp_scan(scan, config, gt, prev_stamp, est_prev_delta, imu_measurements, imu_meta):
    if config.dewarp is DewarpMethod.NONE:
        return dewarp_none(scan)
    if config.dewarp is DewarpMethod.CONSTANT_VELOCITY:
        if config.dewarp_motion_source == "ground_truth":
            if prev_stamp is None or not gt.covers(prev_stamp, scan.stamp):
                return scan
            prev_delta = between(gt.pose_at(prev_stamp), gt.pose_at(scan.stamp))
        else:
            if est_prev_delta is None:
                return scan
            prev_delta = est_prev_delta
        dt = scan.stamp - prev_stamp if prev_stamp is not None else scan.period
        if dt <= 0:
            return scan
        return dewarp_constant_velocity(scan, prev_delta, dt)
    # IMU dewarp: integrate over the scan interval from a gt-anchored state
    t0, t1 = scan.stamp, scan.stamp + scan.period
    state = _imu_state_at(gt, t0, imu_meta, h=scan.period / 2)
    out = integrate(state, imu_measurements, t0, t1)
    return dewarp_imu(scan, out.trajectory)


def _initial_guess(config, gt, t_prev, t_now, est_prev_delta, est_prev_dt,
                   gt_prev_delta, gt_prev_dt, imu_measurements, imu_meta):
    if config.init == InitChoice.IDENTITY:
        return Pose.identity()
    if config.init == InitChoice.GROUND_TRUTH:
        return between(gt.pose_at(t_prev), gt.pose_at(t_now))
    if config.init == InitChoice.CONSTANT_VELOCITY:
        if config.init_motion_source == "ground_truth":
            delta, dt = gt_prev_delta, gt_prev_dt
        else:
            delta, dt = est_prev_delta, est_prev_dt
        if delta is None or dt is None or dt <= 0:
            return Pose.identity()
        return init_constant_velocity(delta, dt, t_now - t_prev)
    # IMU: integrate the previous interval from the gt-anchored state
    state = _imu_state_at(gt, t_prev, imu_meta, h=(t_now - t_prev) / 2)
    out = integrate(state, imu_measurements, t_prev, t_now)
    return between(state.pose, out.trajectory.poses[-1])


def run_odometry(
    scans,
    gt: Trajectory,
    config: ExperimentConfig,
    imu_measurements=None,
    imu_meta: ImuMeta | None = None,
    preprocess_params: PreprocessParams | None = None,
) -> RunOutput:
    """Sequential scan-to-scan odometry over an in-memory scan sequence."""
    config.validate()
    _validate_inputs(config, imu_measurements, gt)
    imu_measurements = _rotate_imu_measurements(imu_measurements or [], imu_meta)
    pp = preprocess_params if preprocess_params is not None else PreprocessParams()

    est_stamps: list[float] = []
    est_poses: list[Pose] = []
    prev_features = None
    prev_stamp = None
    est_prev_delta = None
    est_prev_dt = None
    stats = RunStats()
    iteration_counts: list[int] = []
    t_start = time.perf_counter()
    n_scans = 0
    last_period = 0.1

    for index, scan in enumerate(scans):
        if index >= config.max_scans:
            break
        n_scans += 1
        last_period = scan.period
        try:
            dewarped = _dewarp_scan(
                scan, config, gt, prev_stamp, est_prev_delta, imu_measurements, imu_meta
            )
            features = apply_feature_set(
                classify(preprocess(dewarped, pp), config.feature_params, config.curvature),
                config.feature_set,
            )
            if prev_features is None:
                est_stamps.append(scan.stamp)
                est_poses.append(gt.pose_at(scan.stamp) if gt is not None else Pose.identity())
            else:
                t_prev, t_now = prev_stamp, scan.stamp
                gt_prev_delta = gt_prev_dt = None
                if config.init == InitChoice.CONSTANT_VELOCITY \
                        and config.init_motion_source == "ground_truth" and len(est_stamps) >= 2:
                    t_pp = est_stamps[-2]
                    gt_prev_delta = between(gt.pose_at(t_pp), gt.pose_at(t_prev))
                    gt_prev_dt = t_prev - t_pp
                x0 = _initial_guess(
                    config, gt, t_prev, t_now, est_prev_delta, est_prev_dt,
                    gt_prev_delta, gt_prev_dt, imu_measurements, imu_meta,
                )
                result = solve(
                    features, prev_features, config.residual, x0, config.icp, config.epsilon
                )
                iteration_counts.append(result.iterations)
                est_prev_delta = result.pose
                est_prev_dt = t_now - t_prev
                est_stamps.append(t_now)
                est_poses.append(compose(est_poses[-1], result.pose))
            prev_features = features
            prev_stamp = scan.stamp
        except Exception as e:
            if config.skip_failed:
                log.warning("skipping scan %d: %s", index, e)
                stats.skipped_scans.append(index)
                continue
            raise PipelineError(index, str(e)) from e

    if len(est_stamps) < 2:
        raise PipelineError(n_scans, "fewer than two scans processed")
    elapsed_ms = (time.perf_counter() - t_start) * 1e3
    stats.runtime_ms_per_scan = elapsed_ms / max(n_scans, 1)
    stats.iterations_mean = float(np.mean(iteration_counts)) if iteration_counts else 0.0

    est = Trajectory(np.array(est_stamps), est_poses)
    paired = associate(gt, est, max_dt=last_period / 2)
    report = compute_report(paired, config.window_seconds)
    return RunOutput(est, report, stats)


def run_dataset(dataset: Dataset, config: ExperimentConfig) -> tuple[RunOutput, ResultRow]:
    """Run one sequence from disk and produce its results row."""
    gt = dataset.ground_truth()
    imu = dataset.imu_measurements()
    record = config.record_runtime
    out = run_odometry(
        _capped(dataset.scans(), config.max_scans),
        gt,
        config,
        imu_measurements=imu,
        imu_meta=dataset.manifest.imu,
    )
    row = ResultRow(
        dataset=dataset.manifest.name,
        sequence=dataset.manifest.sequence,
        dewarp=config.dewarp.value,
        init=config.init,
        features=config.feature_set.value,
        residual=config.residual.value,
        epsilon=config.epsilon,
        curvature=config.curvature.value,
        window_s=config.window_seconds,
        window_j=out.report.window_steps,
        ate_t=out.report.ate_trans,
        rte_t=out.report.rte_trans,
        wrte_t=out.report.wrte_trans,
        ate_r=out.report.ate_rot,
        rte_r=out.report.rte_rot,
        wrte_r=out.report.wrte_rot,
        runtime_ms=out.stats.runtime_ms_per_scan if record else 0.0,
        iterations_mean=out.stats.iterations_mean,
    )
    return out, row


class _capped:
    """Bounded iterator over lazily-read scans that still exposes period."""

    def __init__(self, it, limit):
        self._it = it
        self._limit = limit

    def __iter__(self):
        for i, scan in enumerate(self._it):
            if i >= self._limit:
                return
            yield scan


def _cell_key(dataset: Dataset, cell: ExperimentConfig) -> tuple:
    return (
        dataset.manifest.name, dataset.manifest.sequence, cell.dewarp.value, cell.init,
        cell.feature_set.value, cell.residual.value, f"{cell.epsilon:.9g}",
        cell.curvature.value, f"{cell.window_seconds:.9g}",
    )


def _run_cell(manifest_path: str, cell: ExperimentConfig) -> ResultRow:
    dataset = load_dataset(manifest_path)
    _, row = run_dataset(dataset, cell)
    return row


def run_sweep(config: ExperimentConfig, cells, results_path) -> int:
    """Run sweep cells over every dataset, appending rows in deterministic order.

    Cells whose key is already in the results CSV are skipped, which makes
    interrupted sweeps resumable without duplicating rows. With more than one
    worker, cells run in parallel but rows are still appended in cell order,
    so the resulting CSV bytes do not depend on the worker count.
    """
    from concurrent.futures import ProcessPoolExecutor

    from .dataio import append_result_row, read_result_cell_keys

    done = read_result_cell_keys(results_path)
    tasks = []
    for manifest_path in config.datasets:
        dataset = load_dataset(manifest_path)
        for cell in cells:
            if _cell_key(dataset, cell) in done:
                log.info("skipping completed cell %s", _cell_key(dataset, cell))
                continue
            tasks.append((manifest_path, cell))
    if not tasks:
        return 0
    if config.workers == 1:
        for manifest_path, cell in tasks:
            append_result_row(_run_cell(manifest_path, cell), results_path)
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for row in pool.map(_run_cell, *zip(*tasks)):
                append_result_row(row, results_path)
    return len(tasks)
