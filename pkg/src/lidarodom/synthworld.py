"""Synthetic scenes and a spinning-LiDAR simulator with exact ground truth.

The simulator samples the world along the rays of the scan-stamp pose and,
when motion warp is requested, re-expresses each hit in the sensor frame at
its emission time. Warped and unwarped scans of the same scene therefore
contain the same world points, so dewarping with the true motion recovers the
unwarped scan exactly; per-point labels and timestamps are always exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Twist, compose, exp, log
from .imu import ImuMeasurement
from .pointcloud import LidarScan

_EPS = 1e-12


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < _EPS:
        raise ValueError("zero-length direction")
    return v / n


def _plane_axes(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 0.0, 1.0]) if abs(normal[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = _unit(np.cross(normal, ref))
    return u, np.cross(normal, u)


@dataclass(frozen=True, eq=False)
class SurfaceTexture:
    """World-anchored smooth roughness: a sinusoidal range displacement field.

    Unlike per-scan range noise, the displacement is a function of the world
    hit point, so two viewpoints see the same bumps; this is what anchors
    point-to-point matching on otherwise featureless surfaces.
    """

    amplitude: float
    wavelength: float = 2.0
    phase: tuple[float, float] = (0.0, 0.0)

    def displacement(self, u_coord: np.ndarray, v_coord: np.ndarray) -> np.ndarray:
        k = 2.0 * math.pi / self.wavelength
        return 0.5 * self.amplitude * (
            np.sin(k * u_coord + self.phase[0]) + np.sin(1.7 * k * v_coord + self.phase[1])
        )


@dataclass(frozen=True, eq=False)
class Plane:
    """Bounded rectangular patch: center point, unit normal, half extents."""

    center: np.ndarray
    normal: np.ndarray
    extent: tuple[float, float]
    label: str = "plane"
    texture: SurfaceTexture | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "normal", _unit(self.normal))

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        denom = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.center - origin) @ self.normal) / denom
        t = np.where(np.abs(denom) < _EPS, np.inf, t)
        hit = np.isfinite(t) & (t > _EPS)
        q = origin + np.where(hit, t, 0.0)[:, None] * dirs
        u, v = _plane_axes(self.normal)
        du = (q - self.center) @ u
        dv = (q - self.center) @ v
        ok = hit & (np.abs(du) <= self.extent[0]) & (np.abs(dv) <= self.extent[1])
        return np.where(ok, t, np.inf)

    def distance(self, pts: np.ndarray) -> np.ndarray:
        return np.abs((np.atleast_2d(pts) - self.center) @ self.normal)

    def texture_displacement(self, pts: np.ndarray) -> np.ndarray:
        if self.texture is None:
            return np.zeros(len(pts))
        u, v = _plane_axes(self.normal)
        rel = pts - self.center
        return self.texture.displacement(rel @ u, rel @ v)


@dataclass(frozen=True, eq=False)
class Pole:
    """Finite cylinder: axis base point, unit direction, radius, length."""

    base: np.ndarray
    direction: np.ndarray
    radius: float
    length: float
    label: str = "pole"
    texture: SurfaceTexture | None = None

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        object.__setattr__(self, "direction", _unit(self.direction))

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        u = self.direction
        m = origin - self.base
        mp = m - (m @ u) * u
        dp = dirs - np.outer(dirs @ u, u)
        a = np.einsum("ij,ij->i", dp, dp)
        b = 2.0 * (dp @ mp)
        c = mp @ mp - self.radius**2
        disc = b * b - 4.0 * a * c
        with np.errstate(invalid="ignore", divide="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            t1 = (-b - sq) / (2.0 * a)
            t2 = (-b + sq) / (2.0 * a)
        t = np.where(t1 > _EPS, t1, t2)
        axial = (origin + t[:, None] * dirs - self.base) @ u
        ok = (disc >= 0.0) & (a > _EPS) & (t > _EPS) & (axial >= 0.0) & (axial <= self.length)
        return np.where(ok, t, np.inf)

    def distance(self, pts: np.ndarray) -> np.ndarray:
        rel = np.atleast_2d(pts) - self.base
        axial = rel @ self.direction
        radial = rel - np.outer(axial, self.direction)
        return np.abs(np.linalg.norm(radial, axis=1) - self.radius)

    def texture_displacement(self, pts: np.ndarray) -> np.ndarray:
        if self.texture is None:
            return np.zeros(len(pts))
        rel = pts - self.base
        axial = rel @ self.direction
        u, v = _plane_axes(self.direction)
        azimuth = np.arctan2(rel @ v, rel @ u) * self.radius
        return self.texture.displacement(axial, azimuth)


@dataclass(eq=False)
class Scene:
    planes: list = field(default_factory=list)
    poles: list = field(default_factory=list)

    @property
    def surfaces(self) -> list:
        return list(self.planes) + list(self.poles)

    def cast(self, origin: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest hit distance and surface index (-1 for a miss) per ray."""
        n = dirs.shape[0]
        best_t = np.full(n, np.inf)
        best_s = np.full(n, -1, dtype=int)
        for si, surf in enumerate(self.surfaces):
            t = surf.intersect(origin, dirs)
            closer = t < best_t
            best_t[closer] = t[closer]
            best_s[closer] = si
        return best_t, best_s

    def surface_distance(self, labels: np.ndarray, pts_world: np.ndarray) -> np.ndarray:
        """Distance of each world point to its labeled surface."""
        out = np.full(len(labels), np.inf)
        surfaces = self.surfaces
        for si in np.unique(labels):
            if si < 0:
                continue
            idx = labels == si
            out[idx] = surfaces[si].distance(pts_world[idx])
        return out


def box_room(half_widths=(6.0, 5.0, 2.0), poles=(), texture: SurfaceTexture | None = None) -> Scene:
    """Rectangular room centered on the origin, optionally with vertical poles."""
    hx, hy, hz = half_widths
    phases = [(0.4, 1.1), (2.2, 0.3), (1.5, 2.6), (0.9, 1.9), (2.8, 0.7), (1.2, 2.1)]
    specs = [
        ([hx, 0, 0], [-1, 0, 0], (hz, hy), "wall+x"),
        ([-hx, 0, 0], [1, 0, 0], (hz, hy), "wall-x"),
        ([0, hy, 0], [0, -1, 0], (hz, hx), "wall+y"),
        ([0, -hy, 0], [0, 1, 0], (hz, hx), "wall-y"),
        ([0, 0, -hz], [0, 0, 1], (hy, hx), "floor"),
        ([0, 0, hz], [0, 0, -1], (hy, hx), "ceiling"),
    ]
    planes = []
    for (center, normal, extent, label), phase in zip(specs, phases):
        tex = None
        if texture is not None:
            tex = SurfaceTexture(texture.amplitude, texture.wavelength, phase)
        planes.append(Plane(center, normal, extent, label, texture=tex))
    return Scene(planes=planes, poles=list(poles))


@dataclass(frozen=True)
class LidarModel:
    num_scanlines: int = 16
    vertical_fov: tuple[float, float] = (math.radians(-15.0), math.radians(15.0))
    points_per_line: int = 256
    period: float = 0.1
    min_range: float = 0.5
    max_range: float = 100.0

    def __post_init__(self):
        if self.num_scanlines < 1 or self.points_per_line < 1:
            raise ValueError("counts must be >= 1")
        if self.vertical_fov[0] >= self.vertical_fov[1]:
            raise ValueError("vertical_fov min must be < max")

    def ray_directions(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sensor-frame unit directions plus per-ray scanline and azimuth index."""
        az = 2.0 * math.pi * np.arange(self.points_per_line) / self.points_per_line
        if self.num_scanlines == 1:
            elev = np.array([0.5 * (self.vertical_fov[0] + self.vertical_fov[1])])
        else:
            elev = np.linspace(self.vertical_fov[0], self.vertical_fov[1], self.num_scanlines)
        rows, cols = np.meshgrid(np.arange(self.num_scanlines), np.arange(self.points_per_line),
                                 indexing="ij")
        e = elev[rows.ravel()]
        a = az[cols.ravel()]
        dirs = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=1)
        return dirs, rows.ravel(), cols.ravel()


class ScrewTrajectory:
    """pose(t) = base o exp((t - t_ref) * twist); constant body rates."""

    def __init__(self, base: Pose, twist: Twist, t_ref: float = 0.0):
        self.base = base
        self.twist = twist
        self.t_ref = float(t_ref)

    def pose_at(self, t: float) -> Pose:
        return compose(self.base, exp(self.twist.scaled(t - self.t_ref)))

    def body_rates(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Body angular velocity and world acceleration at time t."""
        r = self.pose_at(t).rotation_matrix
        omega = self.twist.angular
        accel_world = r @ np.cross(omega, self.twist.linear)
        return omega, accel_world


class PolyTrajectory:
    """Polynomial translation with a constant body rotation rate.

    p(t) = sum_k coeffs[k] * (t - t_ref)^k, R(t) = R0 o exp((t - t_ref) * omega).
    """

    def __init__(self, coeffs, rotation0: Pose = None, angular_rate=(0.0, 0.0, 0.0), t_ref=0.0):
        self.coeffs = np.asarray(coeffs, dtype=float).reshape(-1, 3)
        self.rot0 = rotation0 if rotation0 is not None else Pose.identity()
        self.omega = np.asarray(angular_rate, dtype=float)
        self.t_ref = float(t_ref)

    def _poly(self, t: float, derivative: int) -> np.ndarray:
        dt = t - self.t_ref
        out = np.zeros(3)
        for k in range(derivative, self.coeffs.shape[0]):
            factor = math.perm(k, derivative)
            out += factor * self.coeffs[k] * dt ** (k - derivative)
        return out

    def pose_at(self, t: float) -> Pose:
        rot = compose(self.rot0, exp(Twist(self.omega * (t - self.t_ref), np.zeros(3))))
        return Pose(rot.q, self._poly(t, 0))

    def body_rates(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return self.omega, self._poly(t, 2)


def simulate_scan(scene: Scene, trajectory, stamp: float, model: LidarModel,
                  warp: bool, rng=None, range_noise: float = 0.0):
    """Ray-cast one scan; returns (LidarScan, per-point surface labels).

    Emission time is linear in azimuth over [0, period). World hits are taken
    along the stamp-pose rays; ``warp`` selects whether each point is expressed
    in the sensor frame at its emission time or at the stamp.
    """
    dirs_sensor, rows, cols = model.ray_directions()
    taus = model.period * cols / model.points_per_line
    pose_stamp = trajectory.pose_at(stamp)
    origin = pose_stamp.t
    dirs_world = dirs_sensor @ pose_stamp.rotation_matrix.T

    t_hit, labels = scene.cast(origin, dirs_world)
    surfaces = scene.surfaces
    if any(s.texture is not None for s in surfaces):
        hit = labels >= 0
        w = origin + np.where(hit, t_hit, 0.0)[:, None] * dirs_world
        for si in np.unique(labels[hit]):
            sel = labels == si
            t_hit[sel] += surfaces[si].texture_displacement(w[sel])
    if range_noise > 0.0:
        if rng is None:
            raise ValueError("range_noise requires an rng")
        t_hit = t_hit + rng.normal(0.0, range_noise, t_hit.shape)
    valid = np.isfinite(t_hit) & (t_hit >= model.min_range) & (t_hit <= model.max_range)

    hits_world = origin + t_hit[valid, None] * dirs_world[valid]
    taus_v = taus[valid]
    rows_v = rows[valid]
    cols_v = cols[valid]
    labels_v = labels[valid]

    positions = np.empty_like(hits_world)
    if warp:
        for tau in np.unique(taus_v):
            idx = taus_v == tau
            inv = trajectory.pose_at(stamp + float(tau)).inverse()
            positions[idx] = inv.apply_many(hits_world[idx])
    else:
        inv = pose_stamp.inverse()
        positions = inv.apply_many(hits_world)

    order = np.lexsort((taus_v, rows_v))
    scan = LidarScan(
        stamp, model.period, model.num_scanlines,
        positions[order], taus_v[order], rows_v[order],
        sample_indices=cols_v[order],
    )
    return scan, labels_v[order]


def simulate_imu(trajectory, rate: float, t0: float, t1: float,
                 gravity=(0.0, 0.0, -9.81), gyro_bias=(0.0, 0.0, 0.0),
                 accel_bias=(0.0, 0.0, 0.0)) -> list[ImuMeasurement]:
    """Exact body-frame measurements of an analytic trajectory, biases added."""
    if not hasattr(trajectory, "body_rates"):
        raise ValueError(
            f"trajectory family {type(trajectory).__name__} has no analytic rates; "
            "use ScrewTrajectory or PolyTrajectory"
        )
    gravity = np.asarray(gravity, dtype=float)
    gyro_bias = np.asarray(gyro_bias, dtype=float)
    accel_bias = np.asarray(accel_bias, dtype=float)
    n = int(math.floor((t1 - t0) * rate + 1e-9)) + 1
    out = []
    for i in range(n):
        t = t0 + i / rate
        omega, accel_world = trajectory.body_rates(t)
        r = trajectory.pose_at(t).rotation_matrix
        out.append(
            ImuMeasurement(t, omega + gyro_bias, r.T @ (accel_world - gravity) + accel_bias)
        )
    if out[-1].stamp < t1:
        t = t0 + n / rate
        omega, accel_world = trajectory.body_rates(t)
        r = trajectory.pose_at(t).rotation_matrix
        out.append(
            ImuMeasurement(t, omega + gyro_bias, r.T @ (accel_world - gravity) + accel_bias)
        )
    return out


def screw_from_delta(delta: Pose, dt: float, base: Pose = None, t_ref: float = 0.0) -> ScrewTrajectory:
    """Constant screw that realizes ``delta`` over ``dt`` starting at ``base``."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    return ScrewTrajectory(base if base is not None else Pose.identity(),
                           log(delta).scaled(1.0 / dt), t_ref)
