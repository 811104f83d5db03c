"""Scan data model, validity preprocessing and deterministic nearest neighbors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class Point:
    """One return: position in the LiDAR frame, emission offset, scanline row."""

    position: np.ndarray
    time_offset: float
    scanline: int
    range: float


@dataclass(frozen=True)
class PreprocessParams:
    min_range: float = 0.5
    max_range: float = 100.0
    parallel_angle_min: float = math.radians(10.0)
    discontinuity_ratio: float = 1.5

    def __post_init__(self):
        if not 0.0 <= self.min_range < self.max_range:
            raise ValueError("require 0 <= min_range < max_range")
        if self.discontinuity_ratio <= 1.0:
            raise ValueError("discontinuity_ratio must be > 1")


class LidarScan:
    """Scanline-organized points with per-point time offsets.

    Storage is scanline-major: points are sorted by (scanline, azimuth order),
    which is the order time offsets are non-decreasing in within a scanline.
    Immutable after construction; the spatial index is built lazily once.
    """

    def __init__(self, stamp, period, num_scanlines, positions, time_offsets, scanlines,
                 sample_indices=None):
        positions = np.ascontiguousarray(positions, dtype=float).reshape(-1, 3)
        time_offsets = np.asarray(time_offsets, dtype=float).reshape(-1)
        scanlines = np.asarray(scanlines, dtype=np.int64).reshape(-1)
        n = positions.shape[0]
        if time_offsets.shape[0] != n or scanlines.shape[0] != n:
            raise ValueError("positions, time_offsets and scanlines must have equal length")
        if n:
            if scanlines.min() < 0 or scanlines.max() >= num_scanlines:
                raise ValueError("scanline index out of range")
            if np.any(time_offsets < 0) or np.any(time_offsets >= period):
                raise ValueError("time offsets must lie in [0, period)")
            order_ok = np.all(np.diff(scanlines) >= 0)
            if not order_ok:
                order = np.lexsort((time_offsets, scanlines))
                positions, time_offsets, scanlines = (
                    positions[order],
                    time_offsets[order],
                    scanlines[order],
                )
                if sample_indices is not None:
                    sample_indices = np.asarray(sample_indices)[order]
            for s0, s1 in zip(*self._row_bounds(scanlines, num_scanlines)):
                if np.any(np.diff(time_offsets[s0:s1]) < 0):
                    raise ValueError("time offsets must be non-decreasing within a scanline")
        self.stamp = float(stamp)
        self.period = float(period)
        self.num_scanlines = int(num_scanlines)
        self.positions = positions
        self.time_offsets = time_offsets
        self.scanlines = scanlines
        self.ranges = np.linalg.norm(positions, axis=1)
        if sample_indices is None:
            # azimuth position within the row; consecutive for a raw scan and
            # preserved through filtering so adjacency gaps stay visible
            sample_indices = np.empty(n, dtype=np.int64)
            for s0, s1 in zip(*self._row_bounds(self.scanlines, self.num_scanlines)):
                sample_indices[s0:s1] = np.arange(s1 - s0)
        self.sample_indices = np.asarray(sample_indices, dtype=np.int64).reshape(-1)
        self._tree = None

    @staticmethod
    def _row_bounds(scanlines, num_scanlines):
        starts = np.searchsorted(scanlines, np.arange(num_scanlines), side="left")
        ends = np.searchsorted(scanlines, np.arange(num_scanlines), side="right")
        return starts, ends

    def __len__(self):
        return self.positions.shape[0]

    def point(self, i: int) -> Point:
        return Point(
            self.positions[i], float(self.time_offsets[i]), int(self.scanlines[i]), float(self.ranges[i])
        )

    def scanline_slice(self, row: int) -> slice:
        s = np.searchsorted(self.scanlines, row, side="left")
        e = np.searchsorted(self.scanlines, row, side="right")
        return slice(int(s), int(e))

    def take(self, mask_or_index) -> "LidarScan":
        idx = np.asarray(mask_or_index)
        return LidarScan(
            self.stamp,
            self.period,
            self.num_scanlines,
            self.positions[idx],
            self.time_offsets[idx],
            self.scanlines[idx],
            sample_indices=self.sample_indices[idx],
        )

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.positions)
        return self._tree


def knn_indices(tree: cKDTree, positions: np.ndarray, tie_order: np.ndarray,
                query: np.ndarray, k: int) -> np.ndarray:
    """Exact k-NN indices, distance-sorted with deterministic tie-breaking.

    Ties in distance are broken by ``tie_order`` (ascending), which callers set
    to the scanline-major storage order so equidistant points resolve by
    scanline then azimuth position.
    """
    n = positions.shape[0]
    k = min(k, n)
    kq = min(k + 8, n)
    _, idx = tree.query(query, k=kq)
    idx = np.atleast_1d(idx)
    d2 = np.einsum("ij,ij->i", positions[idx] - query, positions[idx] - query)
    order = np.lexsort((tie_order[idx], d2))
    picked = idx[order][:k]
    # If ties straddle the candidate boundary, fall back to an exact pass.
    if kq < n and d2[order[k - 1]] == d2[order[-1]]:
        d2_all = np.einsum("ij,ij->i", positions - query, positions - query)
        order_all = np.lexsort((tie_order, d2_all))
        picked = order_all[:k]
    return picked


def nearest_neighbors(scan: LidarScan, query, k: int) -> list[Point]:
    """Exact k nearest points to ``query``; k larger than the scan returns all."""
    if len(scan) == 0:
        raise ValueError("nearest_neighbors on empty scan")
    if k < 1:
        raise ValueError("k must be >= 1")
    order = np.arange(len(scan))
    idx = knn_indices(scan.tree(), scan.positions, order, np.asarray(query, dtype=float), k)
    return [scan.point(int(i)) for i in idx]


def _range_mask(scan: LidarScan, params: PreprocessParams) -> np.ndarray:
    return (scan.ranges >= params.min_range) & (scan.ranges <= params.max_range)


def _scanline_masks(scan: LidarScan, params: PreprocessParams) -> np.ndarray:
    """Parallel-surface and discontinuity tests over in-scanline adjacency.

    Consecutive stored points only count as neighbors when their azimuth
    sample indices are consecutive: a larger step means samples in between
    are missing (no return, or already filtered), so the pair is not a real
    surface adjacency. This gating also makes preprocess idempotent - every
    removal leaves a visible index gap behind.
    """
    keep = np.ones(len(scan), dtype=bool)
    min_angle = params.parallel_angle_min
    ratio = params.discontinuity_ratio
    for row in range(scan.num_scanlines):
        sl = scan.scanline_slice(row)
        m = sl.stop - sl.start
        if m < 2:
            continue
        pos = scan.positions[sl]
        rng = scan.ranges[sl]
        adjacent = np.diff(scan.sample_indices[sl]) == 1
        seg = pos[1:] - pos[:-1]
        seg_norm = np.linalg.norm(seg, axis=1)
        ray = pos[:-1] / np.maximum(rng[:-1, None], 1e-12)
        cosang = np.abs(np.einsum("ij,ij->i", ray, seg)) / np.maximum(seg_norm, 1e-12)
        angle = np.arccos(np.clip(cosang, -1.0, 1.0))
        # (b) surface nearly parallel to the ray: drop the tested point;
        # points with no adjacent next neighbor are exempt.
        parallel = adjacent & (angle < min_angle)
        keep[sl.start : sl.stop - 1] &= ~parallel
        # (c) occlusion jump: drop the farther point and the next two points
        # continuing away from the jump on the farther side.
        with np.errstate(divide="ignore", invalid="ignore"):
            fwd = rng[1:] / np.maximum(rng[:-1], 1e-12)
        for j in np.nonzero(adjacent & (fwd > ratio))[0]:  # point j+1 is farther
            for off in (1, 2, 3):
                if j + off < m:
                    keep[sl.start + j + off] = False
        for j in np.nonzero(adjacent & (fwd < 1.0 / ratio))[0]:  # point j is farther
            for off in (0, 1, 2):
                if j - off >= 0:
                    keep[sl.start + j - off] = False
    return keep


def preprocess(scan: LidarScan, params: PreprocessParams) -> LidarScan:
    """Remove invalid points: out-of-range, grazing surfaces, occlusion jumps.

    Scanline grouping and azimuth order are preserved. Idempotent: the
    adjacency tests skip pairs separated by a sampling gap, which is exactly
    what a removal leaves behind.
    """
    current = scan.take(_range_mask(scan, params))
    if len(current):
        current = current.take(_scanline_masks(current, params))
    return current
