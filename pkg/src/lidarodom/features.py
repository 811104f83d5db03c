"""Curvature estimation and feature classification.

Three curvature estimators are provided: the classical windowed difference sum
along a scanline (value in meters), the second eigenvalue of the scanline
window covariance, and the smallest eigenvalue of the whole-scan k-NN
covariance (both in meters squared). Values are only comparable within one
method, so thresholds are per-method.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .pointcloud import LidarScan


class CurvatureMethod(enum.Enum):
    CLASSICAL = "classical"
    SCANLINE_EIGEN = "scanline_eigen"
    NN_EIGEN = "nn_eigen"


class FeatureKind(enum.Enum):
    PLANAR = "planar"
    EDGE = "edge"
    POINT = "point"


# Per-method (planar, edge) defaults; units are meters for CLASSICAL and
# meters^2 for the eigenvalue methods. NN_EIGEN cannot identify edges.
DEFAULT_THRESHOLDS = {
    CurvatureMethod.CLASSICAL: (0.05, 0.35),
    CurvatureMethod.SCANLINE_EIGEN: (2e-3, 2e-2),
    CurvatureMethod.NN_EIGEN: (1e-4, math.inf),
}

_AZIMUTH_SECTORS = 6


@dataclass(frozen=True)
class Curvature:
    value: float
    method: CurvatureMethod
    valid: bool


@dataclass(frozen=True, eq=False)
class Feature:
    kind: FeatureKind
    position: np.ndarray
    curvature: Curvature
    scanline: int
    normal: np.ndarray | None = None
    direction: np.ndarray | None = None

    def __post_init__(self):
        if self.kind is FeatureKind.PLANAR and self.normal is None:
            raise ValueError("planar feature requires a normal")
        if self.kind is FeatureKind.EDGE and self.direction is None:
            raise ValueError("edge feature requires a direction")


@dataclass(frozen=True)
class FeatureParams:
    window_half_size: int = 5
    planar_threshold: float | None = None  # method default when None
    edge_threshold: float | None = None
    knn_k: int = 10
    min_scanline_spread: int = 2
    max_per_class_per_scanline: int = 24
    edge_radius: float = 0.5
    normal_knn: int = 16
    # plane-fit quality gate: out-of-plane RMS a normal fit may have before
    # the candidate is demoted; tracks the sensor's range noise
    normal_fit_rms: float = 0.02
    # line-fit quality gate: off-line RMS an edge neighborhood may have; kills
    # fuzzy junction bands while keeping sharp corners and silhouettes
    edge_fit_rms: float = 0.05

    def __post_init__(self):
        if self.window_half_size < 1:
            raise ValueError("window_half_size must be >= 1")
        if (
            self.planar_threshold is not None
            and self.edge_threshold is not None
            and not self.planar_threshold < self.edge_threshold
        ):
            raise ValueError("require planar_threshold < edge_threshold")

    def thresholds_for(self, method: CurvatureMethod) -> tuple[float, float]:
        d_planar, d_edge = DEFAULT_THRESHOLDS[method]
        planar = self.planar_threshold if self.planar_threshold is not None else d_planar
        edge = self.edge_threshold if self.edge_threshold is not None else d_edge
        return planar, edge


def _window_sums(pts: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Sliding full-window sums of points and of their outer products."""
    m = pts.shape[0]
    w = 2 * n + 1
    csum = np.concatenate([np.zeros((1, 3)), np.cumsum(pts, axis=0)])
    outer = np.einsum("ij,ik->ijk", pts, pts)
    csum2 = np.concatenate([np.zeros((1, 3, 3)), np.cumsum(outer, axis=0)])
    centers = np.arange(n, m - n)
    s1 = csum[centers + n + 1] - csum[centers - n]
    s2 = csum2[centers + n + 1] - csum2[centers - n]
    return s1, s2


def curvature_classical(pts: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """kappa_i = || (1/n) sum_{-n<=j<=n} (p_{i+j} - p_i) || per scanline point.

    Returns (values, valid); points whose window leaves the scanline are
    invalid with value 0.
    """
    pts = np.asarray(pts, dtype=float)
    m = pts.shape[0]
    values = np.zeros(m)
    valid = np.zeros(m, dtype=bool)
    if m < 2 * n + 1:
        return values, valid
    s1, _ = _window_sums(pts, n)
    centers = np.arange(n, m - n)
    diff = (s1 - (2 * n + 1) * pts[centers]) / n
    values[centers] = np.linalg.norm(diff, axis=1)
    valid[centers] = True
    return values, valid


def _window_covariances(pts: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Covariance about the center point (not the mean) per full window."""
    m = pts.shape[0]
    s1, s2 = _window_sums(pts, n)
    centers = np.arange(n, m - n)
    p = pts[centers]
    w = 2 * n + 1
    pp = np.einsum("ij,ik->ijk", p, p)
    cross = np.einsum("ij,ik->ijk", p, s1)
    cov = (s2 - cross - cross.transpose(0, 2, 1) + w * pp) / (2 * n)
    return cov, centers


def curvature_scanline_eigen(pts: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Second-smallest eigenvalue of the window covariance about each point.

    One eigenvalue is always small along the scanline, so the second carries
    the planar/edge signal. Windows with no spread at all are invalid.
    """
    pts = np.asarray(pts, dtype=float)
    m = pts.shape[0]
    values = np.zeros(m)
    valid = np.zeros(m, dtype=bool)
    if m < 2 * n + 1:
        return values, valid
    cov, centers = _window_covariances(pts, n)
    eig = np.linalg.eigvalsh(cov)
    values[centers] = np.maximum(eig[:, 1], 0.0)
    valid[centers] = eig[:, 2] > 1e-15
    return values, valid


def curvature_nn_eigen(
    scan: LidarScan, k: int, min_scanline_spread: int
) -> tuple[np.ndarray, np.ndarray]:
    """Smallest eigenvalue of the k-NN covariance about each point, whole scan.

    Invalid unless the neighbors span at least ``min_scanline_spread`` distinct
    scanlines: same-scanline neighbors are nearly collinear and would always
    produce a small first eigenvalue.
    """
    m = len(scan)
    values = np.zeros(m)
    valid = np.zeros(m, dtype=bool)
    if m < 2:
        return values, valid
    kq = min(k + 1, m)
    _, idx = scan.tree().query(scan.positions, k=kq)
    idx = np.atleast_2d(idx)
    # drop the self column (distance zero); with duplicates any one stands in
    neigh = idx[:, 1:]
    dev = scan.positions[neigh] - scan.positions[:, None, :]
    cov = np.einsum("nkj,nkl->njl", dev, dev) / max(neigh.shape[1], 1)
    eig = np.linalg.eigvalsh(cov)
    values = np.maximum(eig[:, 0], 0.0)
    rows = scan.scanlines[neigh]
    spread = np.array([len(np.unique(r)) for r in rows])
    valid = spread >= min_scanline_spread
    return values, valid


_SEGMENT_GAP = 8  # missing samples tolerated inside one curvature segment


def _contiguous_segments(sample_indices: np.ndarray) -> list[slice]:
    """Split a scanline at large sampling gaps (long runs of missing returns,
    field-of-view seams): points across such a gap are not spatial neighbors.

    Short gaps (a few pruned samples around corners or occlusions) are kept so
    windows still see the geometry transition.
    """
    m = sample_indices.shape[0]
    if m < 2:
        return [slice(0, m)]
    breaks = np.nonzero(np.diff(sample_indices) > _SEGMENT_GAP)[0]
    bounds = [0, *(breaks + 1), m]
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def curvature_for(scan: LidarScan, params: FeatureParams, method: CurvatureMethod):
    """Per-point (values, valid) arrays for the whole scan under one method."""
    if method is CurvatureMethod.NN_EIGEN:
        return curvature_nn_eigen(scan, params.knn_k, params.min_scanline_spread)
    values = np.zeros(len(scan))
    valid = np.zeros(len(scan), dtype=bool)
    fn = curvature_classical if method is CurvatureMethod.CLASSICAL else curvature_scanline_eigen
    for row in range(scan.num_scanlines):
        sl = scan.scanline_slice(row)
        if sl.stop == sl.start:
            continue
        for seg in _contiguous_segments(scan.sample_indices[sl]):
            lo, hi = sl.start + seg.start, sl.start + seg.stop
            v, ok = fn(scan.positions[lo:hi], params.window_half_size)
            values[lo:hi] = v
            valid[lo:hi] = ok
    return values, valid


def estimate_normal(scan: LidarScan, position, k: int = 10, max_fit_rms: float = 0.02):
    """Plane normal from the k-NN neighborhood, sign fixed toward the origin.

    Returns None when the fit is unsupported: fewer than 5 points, neighbors
    from a single scanline (collinear by construction), a degenerate fit, or
    an out-of-plane RMS above ``max_fit_rms`` (the neighborhood straddles a
    junction between surfaces and the normal would be meaningless).
    """
    position = np.asarray(position, dtype=float)
    kq = min(k + 1, len(scan))
    _, idx = scan.tree().query(position, k=kq)
    idx = np.atleast_1d(idx)
    pts0 = scan.positions[idx]
    pts = pts0
    rows = scan.scanlines[idx]
    for _ in range(2):  # fit, then refit once with far-out-of-plane points dropped
        if pts.shape[0] < 5 or len(np.unique(rows)) < 2:
            return None
        mean = pts.mean(axis=0)
        centered = pts - mean
        cov = centered.T @ centered / pts.shape[0]
        eigval, eigvec = np.linalg.eigh(cov)
        if eigval[1] <= 1e-8 * max(eigval[2], 1e-30):  # collinear neighborhood
            return None
        n = eigvec[:, 0]
        rms = math.sqrt(max(eigval[0], 0.0))
        dist = np.abs(centered @ n)
        keep = dist <= max(2.5 * rms, 1e-9)
        if keep.all():
            break
        pts, rows = pts[keep], rows[keep]
    if rms > max_fit_rms:
        return None
    # the final plane must explain the original neighborhood, otherwise the
    # trim just carved a plausible-looking plane out of a surface junction
    support = np.abs((pts0 - mean) @ n) <= max(3.0 * rms, max_fit_rms)
    if support.mean() < 0.8:
        return None
    return _sign_toward_origin(n, position)


def _sign_toward_origin(n: np.ndarray, position: np.ndarray) -> np.ndarray:
    s = float(n @ position)
    if s > 1e-12:
        return -n
    if s < -1e-12:
        return n
    return _canonical_sign(n)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def estimate_edge_direction(positions: np.ndarray, max_fit_rms: float = math.inf):
    """Dominant direction of a set of edge points; (direction, confident).

    Confidence is low when the spread is near-isotropic (largest eigenvalue
    not clearly dominant) or when the points lie farther than ``max_fit_rms``
    RMS off the fitted line; callers demote such features.
    """
    positions = np.asarray(positions, dtype=float)
    centered = positions - positions.mean(axis=0)
    cov = centered.T @ centered / positions.shape[0]
    eigval, eigvec = np.linalg.eigh(cov)
    d = _canonical_sign(eigvec[:, 2])
    off_line_rms = math.sqrt(max(eigval[0], 0.0) + max(eigval[1], 0.0))
    confident = (
        eigval[2] > 2.0 * max(eigval[1], 0.0)
        and eigval[2] > 1e-15
        and off_line_rms <= max_fit_rms
    )
    return d, confident


def _occluded_side_mask(scan: LidarScan, window: int, range_gap: float = 0.3) -> np.ndarray:
    """Points near the farther side of an in-scanline range jump.

    Where the range jumps (between stored neighbors or across a sampling gap),
    the farther surface's visible boundary is an occlusion shadow whose
    location depends on the viewpoint, so the farther side's points within a
    curvature window of the jump are edge artifacts, not geometry. The nearer
    side (the occluder's true silhouette) stays eligible.
    """
    occluded = np.zeros(len(scan), dtype=bool)
    for row in range(scan.num_scanlines):
        sl = scan.scanline_slice(row)
        m = sl.stop - sl.start
        if m < 2:
            continue
        rng = scan.ranges[sl]
        jumps = np.abs(np.diff(rng)) > range_gap
        for j in np.nonzero(jumps)[0]:
            if rng[j] < rng[j + 1]:  # far side continues rightward
                hi = min(j + 1 + window, m)
                occluded[sl.start + j + 1 : sl.start + hi] = True
            else:  # far side continues leftward
                lo = max(j + 1 - window, 0)
                occluded[sl.start + lo : sl.start + j + 1] = True
    return occluded


def _sector_select(order_in_row: np.ndarray, row_size: int, quota_total: int) -> np.ndarray:
    """Pick up to a per-sector share of candidates, spread over azimuth sectors.

    ``order_in_row`` holds candidate in-row indices already sorted from most to
    least extreme curvature.
    """
    if order_in_row.size == 0:
        return order_in_row
    per_sector = max(1, math.ceil(quota_total / _AZIMUTH_SECTORS))
    sector_of = (order_in_row * _AZIMUTH_SECTORS) // max(row_size, 1)
    taken = []
    counts = np.zeros(_AZIMUTH_SECTORS, dtype=int)
    for pos in order_in_row:
        s = int((pos * _AZIMUTH_SECTORS) // max(row_size, 1))
        if counts[s] < per_sector:
            counts[s] += 1
            taken.append(pos)
        if len(taken) >= quota_total:
            break
    return np.array(sorted(taken), dtype=int)


def classify(scan: LidarScan, params: FeatureParams, method: CurvatureMethod) -> list[Feature]:
    """Classify scan points into Planar / Edge / Point features.

    Valid curvature below the planar threshold selects planar candidates and
    above the edge threshold edge candidates (classical and scanline-eigen
    only; the NN-eigen method cannot see discontinuity edges). A per-scanline,
    per-class budget is enforced keeping the most extreme curvatures, spread
    over azimuth sectors. Planar features carry a fitted normal and edges a
    direction; candidates whose estimate fails are demoted to Point features.
    """
    values, valid = curvature_for(scan, params, method)
    planar_thr, edge_thr = params.thresholds_for(method)
    planar_mask = valid & (values < planar_thr)
    if method is not CurvatureMethod.NN_EIGEN:
        occluded = _occluded_side_mask(scan, params.window_half_size)
        edge_mask = valid & (values > edge_thr) & ~occluded
    else:
        edge_mask = np.zeros(len(scan), dtype=bool)

    planar_idx: list[int] = []
    edge_idx: list[int] = []
    cap = params.max_per_class_per_scanline
    for row in range(scan.num_scanlines):
        sl = scan.scanline_slice(row)
        if sl.stop == sl.start:
            continue
        row_size = sl.stop - sl.start
        vals = values[sl]
        p_in_row = np.nonzero(planar_mask[sl])[0]
        if p_in_row.size:
            order = p_in_row[np.argsort(vals[p_in_row], kind="stable")]
            keep = _sector_select(order, row_size, cap)
            planar_idx.extend(sl.start + keep)
        e_in_row = np.nonzero(edge_mask[sl])[0]
        if e_in_row.size:
            order = e_in_row[np.argsort(-vals[e_in_row], kind="stable")]
            keep = _sector_select(order, row_size, cap)
            edge_idx.extend(sl.start + keep)

    features: list[Feature] = []
    for i in planar_idx:
        curv = Curvature(float(values[i]), method, True)
        normal = estimate_normal(
            scan, scan.positions[i], k=params.normal_knn, max_fit_rms=params.normal_fit_rms
        )
        if normal is None:
            features.append(
                Feature(FeatureKind.POINT, scan.positions[i], curv, int(scan.scanlines[i]))
            )
        else:
            features.append(
                Feature(
                    FeatureKind.PLANAR, scan.positions[i], curv, int(scan.scanlines[i]),
                    normal=normal,
                )
            )

    if edge_idx:
        cand_idx = np.nonzero(edge_mask)[0]
        edge_candidates = scan.positions[cand_idx]
        edge_rows = scan.scanlines[cand_idx]
        for i in edge_idx:
            curv = Curvature(float(values[i]), method, True)
            d2 = np.einsum("ij,ij->i", edge_candidates - scan.positions[i],
                           edge_candidates - scan.positions[i])
            near_mask = d2 <= params.edge_radius**2
            nearby = edge_candidates[near_mask]
            # a real edge line crosses scanlines; candidates from one row only
            # trace that row's own curve, not scene geometry
            if nearby.shape[0] < 3 or len(np.unique(edge_rows[near_mask])) < 2:
                features.append(
                    Feature(FeatureKind.POINT, scan.positions[i], curv, int(scan.scanlines[i]))
                )
                continue
            direction, confident = estimate_edge_direction(nearby, params.edge_fit_rms)
            if not confident:
                features.append(
                    Feature(FeatureKind.POINT, scan.positions[i], curv, int(scan.scanlines[i]))
                )
            else:
                # snap onto the fitted 3D line: scan points sit on the walls
                # beside the edge, but the residual model treats the feature
                # position as a sample of the edge line itself
                centroid = nearby.mean(axis=0)
                offset = scan.positions[i] - centroid
                position = centroid + (offset @ direction) * direction
                features.append(
                    Feature(
                        FeatureKind.EDGE, position, curv, int(scan.scanlines[i]),
                        direction=direction,
                    )
                )
    return features


class FeatureSet(enum.Enum):
    POINT = "point"
    PLANAR = "planar"
    PLANAR_AND_EDGE = "planar_and_edge"


def apply_feature_set(features: list[Feature], feature_set: FeatureSet) -> list[Feature]:
    """Restrict classified features to the configured combination.

    POINT keeps every candidate location but strips its class (point features
    at the exact locations of the planar/edge features); PLANAR keeps planar
    only; PLANAR_AND_EDGE keeps planar and edge features, dropping candidates
    that were demoted to plain points.
    """
    if feature_set is FeatureSet.PLANAR_AND_EDGE:
        return [f for f in features if f.kind is not FeatureKind.POINT]
    if feature_set is FeatureSet.PLANAR:
        return [f for f in features if f.kind is FeatureKind.PLANAR]
    return [
        Feature(FeatureKind.POINT, f.position, f.curvature, f.scanline) for f in features
    ]


def calibrate_thresholds(
    scan: LidarScan, params: FeatureParams, method: CurvatureMethod,
    target_planar_fraction: float = 0.3, target_edge_fraction: float = 0.05,
) -> FeatureParams:
    """Pick thresholds so roughly the requested fractions of valid points qualify."""
    values, valid = curvature_for(scan, params, method)
    v = np.sort(values[valid])
    if v.size == 0:
        return params
    planar = float(np.quantile(v, min(target_planar_fraction, 1.0)))
    if method is CurvatureMethod.NN_EIGEN:
        return replace(params, planar_threshold=planar, edge_threshold=math.inf)
    edge = float(np.quantile(v, max(1.0 - target_edge_fraction, 0.0)))
    if not planar < edge:
        edge = planar * 2.0 + 1e-12
    return replace(params, planar_threshold=planar, edge_threshold=edge)
