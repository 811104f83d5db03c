"""Generate synthetic datasets on disk from a declarative scene/trajectory spec."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .dataio import (
    DatasetManifest,
    ImuMeta,
    LidarMeta,
    write_imu_csv,
    write_manifest,
    write_scan,
    write_trajectory,
)
from .errors import ConfigError
from .geometry import Pose, Trajectory, Twist
from .synthworld import (
    LidarModel,
    Plane,
    Pole,
    PolyTrajectory,
    Scene,
    ScrewTrajectory,
    box_room,
    simulate_imu,
    simulate_scan,
)


def scene_from_spec(spec: dict) -> Scene:
    spec = spec or {}
    scene = Scene()
    if "box_room" in spec:
        scene = box_room(tuple(spec["box_room"].get("half_widths", (6.0, 5.0, 2.0))))
    for p in spec.get("planes", []) or []:
        scene.planes.append(
            Plane(p["center"], p["normal"], tuple(p["extent"]), p.get("label", "plane"))
        )
    for p in spec.get("poles", []) or []:
        scene.poles.append(
            Pole(p["base"], p["direction"], float(p["radius"]), float(p["length"]),
                 p.get("label", "pole"))
        )
    if not scene.surfaces:
        raise ConfigError("scene spec produced no surfaces")
    return scene


def trajectory_from_spec(spec: dict):
    spec = dict(spec or {})
    kind = spec.get("kind", "screw")
    start = spec.get("start", [0, 0, 0, 0, 0, 0, 1])
    base = Pose(np.asarray(start[3:], dtype=float), np.asarray(start[:3], dtype=float))
    if kind == "screw":
        tw = spec.get("twist", {})
        twist = Twist(
            np.asarray(tw.get("angular", [0, 0, 0]), dtype=float),
            np.asarray(tw.get("linear", [0, 0, 0]), dtype=float),
        )
        return ScrewTrajectory(base, twist, t_ref=float(spec.get("t_ref", 0.0)))
    if kind == "poly":
        return PolyTrajectory(
            spec.get("coeffs", [[0, 0, 0]]),
            rotation0=Pose(base.q, np.zeros(3)),
            angular_rate=spec.get("angular_rate", [0, 0, 0]),
            t_ref=float(spec.get("t_ref", 0.0)),
        )
    raise ConfigError(f"unknown trajectory kind {kind!r} (use screw or poly)")


def lidar_model_from_spec(spec: dict) -> LidarModel:
    spec = dict(spec or {})
    fov = spec.get("vertical_fov_deg", [-15.0, 15.0])
    return LidarModel(
        num_scanlines=int(spec.get("num_scanlines", 16)),
        vertical_fov=(math.radians(float(fov[0])), math.radians(float(fov[1]))),
        points_per_line=int(spec.get("points_per_line", 256)),
        period=float(spec.get("period", 0.1)),
        min_range=float(spec.get("min_range", 0.5)),
        max_range=float(spec.get("max_range", 100.0)),
    )


def generate_dataset(doc: dict, out_dir) -> Path:
    """Write scans, IMU, gt and a manifest; returns the manifest path.

    Deterministic: a fixed seed reproduces byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scan_dir = out / "scans"
    scan_dir.mkdir(exist_ok=True)

    scene = scene_from_spec(doc.get("scene"))
    traj = trajectory_from_spec(doc.get("trajectory"))
    model = lidar_model_from_spec(doc.get("lidar"))
    num_scans = int(doc.get("num_scans", 50))
    if num_scans < 2:
        raise ConfigError("num_scans must be >= 2")
    start_time = float(doc.get("start_time", 0.0))
    warp = bool(doc.get("warp", False))
    noise = float(doc.get("range_noise", 0.0))
    seed = int(doc.get("seed", 0))
    rng = np.random.default_rng(seed)

    stamps = start_time + np.arange(num_scans) * model.period
    for stamp in stamps:
        scan, _ = simulate_scan(
            scene, traj, float(stamp), model, warp=warp,
            rng=rng if noise > 0 else None, range_noise=noise,
        )
        write_scan(scan, scan_dir)

    # gt at twice the scan rate, padded so IMU-fed components stay covered
    gt_t0 = start_time - model.period
    gt_t1 = start_time + (num_scans + 1) * model.period
    gt_stamps = np.arange(gt_t0, gt_t1 + model.period / 4, model.period / 2)
    gt = Trajectory(gt_stamps, [traj.pose_at(float(t)) for t in gt_stamps])
    gt_path = out / "gt.txt"
    write_trajectory(gt, gt_path)

    imu_doc = doc.get("imu")
    imu_path = None
    imu_meta = None
    if imu_doc:
        rate = float(imu_doc.get("rate", 200.0))
        gravity = imu_doc.get("gravity", [0.0, 0.0, -9.81])
        gyro_bias = imu_doc.get("gyro_bias", [0.0, 0.0, 0.0])
        accel_bias = imu_doc.get("accel_bias", [0.0, 0.0, 0.0])
        measurements = simulate_imu(
            traj, rate, gt_t0, gt_t1, gravity=gravity,
            gyro_bias=gyro_bias, accel_bias=accel_bias,
        )
        imu_path = out / "imu.csv"
        write_imu_csv(measurements, imu_path)
        imu_meta = ImuMeta(
            rate=rate, gravity=gravity, gyro_bias=gyro_bias, accel_bias=accel_bias,
        )

    manifest = DatasetManifest(
        name=str(doc.get("name", "synth")),
        sequence=str(doc.get("sequence", "00")),
        scan_dir=scan_dir,
        gt_path=gt_path,
        lidar=LidarMeta(model.num_scanlines, model.period,
                        str(doc.get("stamp_convention", "start"))),
        imu_path=imu_path,
        imu=imu_meta,
    )
    manifest_path = out / "manifest.yaml"
    write_manifest(manifest, manifest_path)
    return manifest_path
