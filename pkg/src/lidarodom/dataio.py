"""On-disk dataset format, trajectory files and the results CSV.

Formats are bit-stable so independent implementations interoperate:

  - Scan files: little-endian, 16-byte header (magic ``LSCN``, u32 version=1,
    u32 point count, f32 reserved), then one 20-byte record per point
    (f32 x, y, z, f32 time_offset, u16 scanline, u16 pad). One file per scan,
    named by its nanosecond stamp, so directory order is stamp order.
  - Trajectories: TUM-style text lines ``stamp tx ty tz qx qy qz qw``,
    ``#`` comments; stamps carry nine decimals, components twelve significant
    digits (round-trips within 1e-9 for values up to a kilometer).
  - IMU: CSV ``stamp,wx,wy,wz,ax,ay,az`` in SI units.
  - Results: fixed-header CSV, RFC-4180 quoting.

The environment variable ``LIDARODOM_DATA_ROOT`` rebases relative manifest
paths passed to ``load_dataset``.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DataFormatError
from .geometry import Pose, Trajectory
from .imu import ImuMeasurement
from .pointcloud import LidarScan

SCAN_MAGIC = b"LSCN"
SCAN_VERSION = 1
_HEADER = struct.Struct("<4sIIf")
_RECORD = struct.Struct("<ffffHH")

RESULTS_HEADER = [
    "dataset", "sequence", "dewarp", "init", "features", "residual", "epsilon",
    "curvature", "window_s", "window_j", "ate_t", "rte_t", "wrte_t",
    "ate_r", "rte_r", "wrte_r", "runtime_ms", "iterations_mean",
]

STAMP_CONVENTIONS = ("start", "mid", "end")


def write_scan(scan: LidarScan, directory: Path) -> Path:
    ns = int(round(scan.stamp * 1e9))
    path = Path(directory) / f"{ns:019d}.lscn"
    with open(path, "wb") as f:
        f.write(_HEADER.pack(SCAN_MAGIC, SCAN_VERSION, len(scan), 0.0))
        for i in range(len(scan)):
            x, y, z = scan.positions[i]
            f.write(_RECORD.pack(x, y, z, scan.time_offsets[i], int(scan.scanlines[i]), 0))
    return path


def read_scan(path, period: float, num_scanlines: int) -> LidarScan:
    path = Path(path)
    try:
        stamp = int(path.stem) / 1e9
    except ValueError:
        raise DataFormatError(f"{path}: scan file name must be a nanosecond stamp")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, count, _ = _HEADER.unpack_from(raw)
    if magic != SCAN_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {SCAN_MAGIC!r}")
    if version != SCAN_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + count * _RECORD.size
    if len(raw) != expected:
        raise DataFormatError(f"{path}: size {len(raw)} != expected {expected} for {count} points")
    data = np.frombuffer(
        raw, dtype=np.dtype([("xyz", "<f4", 3), ("tau", "<f4"), ("row", "<u2"), ("pad", "<u2")]),
        offset=_HEADER.size,
    )
    return LidarScan(
        stamp, period, num_scanlines,
        data["xyz"].astype(np.float64),
        data["tau"].astype(np.float64),
        data["row"].astype(np.int64),
    )


def write_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w") as f:
        f.write("# stamp tx ty tz qx qy qz qw\n")
        for stamp, pose in traj:
            comps = " ".join(f"{v:.12g}" for v in (*pose.t, *pose.q))
            f.write(f"{stamp:.9f} {comps}\n")


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    stamps, poses = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 8 fields (stamp tx ty tz qx qy qz qw), "
                    f"got {len(parts)}"
                )
            try:
                values = [float(p) for p in parts]
            except ValueError as e:
                raise DataFormatError(f"{path}:{lineno}: non-numeric field: {e}")
            stamp, tx, ty, tz, qx, qy, qz, qw = values
            if stamps and stamp <= stamps[-1]:
                raise DataFormatError(
                    f"{path}:{lineno}: stamp {stamp:.9f} not increasing "
                    f"(previous {stamps[-1]:.9f})"
                )
            stamps.append(stamp)
            poses.append(Pose(np.array([qx, qy, qz, qw]), np.array([tx, ty, tz])))
    if not stamps:
        raise DataFormatError(f"{path}: no trajectory entries")
    return Trajectory(np.array(stamps), poses)


def write_imu_csv(measurements, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["stamp", "wx", "wy", "wz", "ax", "ay", "az"])
        for m in measurements:
            w.writerow(
                [f"{m.stamp:.9f}"]
                + [f"{v:.12g}" for v in (*m.angular_velocity, *m.linear_acceleration)]
            )


def read_imu_csv(path) -> list[ImuMeasurement]:
    path = Path(path)
    out = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0] == "stamp":
                continue
            if not row:
                continue
            if len(row) != 7:
                raise DataFormatError(f"{path}:{lineno}: expected 7 fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as e:
                raise DataFormatError(f"{path}:{lineno}: non-numeric field: {e}")
            out.append(ImuMeasurement(vals[0], np.array(vals[1:4]), np.array(vals[4:7])))
    if out and any(b.stamp <= a.stamp for a, b in zip(out, out[1:])):
        i = next(i for i, (a, b) in enumerate(zip(out, out[1:])) if b.stamp <= a.stamp)
        raise DataFormatError(f"{path}: stamps not strictly increasing at entry {i + 2}")
    return out


@dataclass(eq=False)
class LidarMeta:
    num_scanlines: int
    period: float
    stamp_convention: str = "start"

    def __post_init__(self):
        if self.stamp_convention not in STAMP_CONVENTIONS:
            raise ConfigError(
                f"stamp_convention must be one of {STAMP_CONVENTIONS}, "
                f"got {self.stamp_convention!r}"
            )


@dataclass(eq=False)
class ImuMeta:
    rate: float
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    extrinsic: Pose = field(default_factory=Pose.identity)  # lidar -> imu
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float)
        self.gyro_bias = np.asarray(self.gyro_bias, dtype=float)
        self.accel_bias = np.asarray(self.accel_bias, dtype=float)


@dataclass(eq=False)
class DatasetManifest:
    name: str
    scan_dir: Path
    gt_path: Path
    lidar: LidarMeta
    sequence: str = "00"
    imu_path: Path | None = None
    imu: ImuMeta | None = None
    units: str = "SI"


def _pose_from_seven(values) -> Pose:
    values = [float(v) for v in values]
    if len(values) != 7:
        raise ConfigError("extrinsic pose needs 7 values: tx ty tz qx qy qz qw")
    return Pose(np.array(values[3:]), np.array(values[:3]))


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    root = os.environ.get("LIDARODOM_DATA_ROOT")
    if root and not path.is_absolute():
        path = Path(root) / path
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    with open(path) as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: manifest must be a mapping")
    base = path.parent
    try:
        lidar = LidarMeta(
            num_scanlines=int(doc["lidar"]["num_scanlines"]),
            period=float(doc["lidar"]["period"]),
            stamp_convention=doc["lidar"].get("stamp_convention", "start"),
        )
        scan_dir = base / doc["scans"]
        gt_path = base / doc["ground_truth"]
        manifest = DatasetManifest(
            name=str(doc["name"]),
            sequence=str(doc.get("sequence", "00")),
            scan_dir=scan_dir,
            gt_path=gt_path,
            lidar=lidar,
            units=str(doc.get("units", "SI")),
        )
    except KeyError as e:
        raise ConfigError(f"{path}: missing manifest key {e}")
    if manifest.units != "SI":
        raise ConfigError(f"{path}: units must be SI, got {manifest.units!r}")
    if "imu" in doc and doc["imu"]:
        manifest.imu_path = base / doc["imu"]
        meta = doc.get("imu_meta", {})
        if "rate" not in meta:
            raise ConfigError(f"{path}: imu_meta.rate required when an imu file is given")
        manifest.imu = ImuMeta(
            rate=float(meta["rate"]),
            gravity=meta.get("gravity", [0.0, 0.0, -9.81]),
            extrinsic=_pose_from_seven(meta.get("extrinsic", [0, 0, 0, 0, 0, 0, 1])),
            gyro_bias=meta.get("gyro_bias", [0.0, 0.0, 0.0]),
            accel_bias=meta.get("accel_bias", [0.0, 0.0, 0.0]),
        )
    for p, what in ((manifest.scan_dir, "scan directory"), (manifest.gt_path, "ground truth")):
        if not p.exists():
            raise ConfigError(f"{path}: {what} does not exist: {p}")
    if manifest.imu_path is not None and not manifest.imu_path.exists():
        raise ConfigError(f"{path}: imu file does not exist: {manifest.imu_path}")
    return manifest


def write_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "name": manifest.name,
        "sequence": manifest.sequence,
        "scans": os.path.relpath(manifest.scan_dir, Path(path).parent),
        "ground_truth": os.path.relpath(manifest.gt_path, Path(path).parent),
        "units": manifest.units,
        "lidar": {
            "num_scanlines": manifest.lidar.num_scanlines,
            "period": manifest.lidar.period,
            "stamp_convention": manifest.lidar.stamp_convention,
        },
    }
    if manifest.imu_path is not None:
        doc["imu"] = os.path.relpath(manifest.imu_path, Path(path).parent)
        meta = manifest.imu
        doc["imu_meta"] = {
            "rate": meta.rate,
            "gravity": [float(v) for v in meta.gravity],
            "extrinsic": [float(v) for v in (*meta.extrinsic.t, *meta.extrinsic.q)],
            "gyro_bias": [float(v) for v in meta.gyro_bias],
            "accel_bias": [float(v) for v in meta.accel_bias],
        }
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


@dataclass(eq=False)
class Dataset:
    """Lazily streamed scans plus parsed IMU and ground truth."""

    manifest: DatasetManifest
    scan_paths: list

    @property
    def stamps(self) -> np.ndarray:
        return np.array([int(p.stem) / 1e9 for p in self.scan_paths])

    def __len__(self):
        return len(self.scan_paths)

    def scans(self):
        lidar = self.manifest.lidar
        for p in self.scan_paths:
            yield read_scan(p, lidar.period, lidar.num_scanlines)

    def imu_measurements(self) -> list[ImuMeasurement] | None:
        if self.manifest.imu_path is None:
            return None
        return read_imu_csv(self.manifest.imu_path)

    def ground_truth(self) -> Trajectory:
        return read_trajectory(self.manifest.gt_path)


def load_dataset(manifest_path) -> Dataset:
    manifest = read_manifest(manifest_path)
    paths = sorted(manifest.scan_dir.glob("*.lscn"))
    if not paths:
        raise ConfigError(f"no .lscn scans in {manifest.scan_dir}")
    return Dataset(manifest, paths)


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    sequence: str
    dewarp: str
    init: str
    features: str
    residual: str
    epsilon: float
    curvature: str
    window_s: float
    window_j: int
    ate_t: float
    rte_t: float
    wrte_t: float
    ate_r: float
    rte_r: float
    wrte_r: float
    runtime_ms: float
    iterations_mean: float

    def as_record(self) -> list[str]:
        return [
            self.dataset, self.sequence, self.dewarp, self.init, self.features,
            self.residual, f"{self.epsilon:.9g}", self.curvature,
            f"{self.window_s:.9g}", str(self.window_j),
            f"{self.ate_t:.9g}", f"{self.rte_t:.9g}", f"{self.wrte_t:.9g}",
            f"{self.ate_r:.9g}", f"{self.rte_r:.9g}", f"{self.wrte_r:.9g}",
            f"{self.runtime_ms:.3f}", f"{self.iterations_mean:.3f}",
        ]

    def cell_key(self) -> tuple:
        """Identity of the sweep cell this row belongs to (for resuming)."""
        return (
            self.dataset, self.sequence, self.dewarp, self.init, self.features,
            self.residual, f"{self.epsilon:.9g}", self.curvature, f"{self.window_s:.9g}",
        )


def write_results_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for row in rows:
            w.writerow(row.as_record())


def append_result_row(row: ResultRow, path) -> None:
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as f:
        w = csv.writer(f, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        if fresh:
            w.writerow(RESULTS_HEADER)
        w.writerow(row.as_record())


def read_result_cell_keys(path) -> set:
    """Cell keys already present in a results CSV (sweep resume)."""
    path = Path(path)
    if not path.exists():
        return set()
    keys = set()
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return set()
        if header != RESULTS_HEADER:
            raise DataFormatError(f"{path}: unexpected results header {header}")
        for row in reader:
            if len(row) != len(RESULTS_HEADER):
                continue
            keys.add(tuple(row[:9]))
    return keys
