"""Scan-to-scan ICP: initialization, matching, residual weighting and the solver.

The solved transform X maps source-scan coordinates into the target frame,
minimizing sum_k r_k(X)^T Lambda_k(X) r_k(X) with r(X) = p_target - X p_source.
Gauss-Newton steps use the right perturbation X <- X o exp(delta) with
delta = (omega, v); the residual Jacobian is J = [R skew(p_source) | -R].
Lambda is frozen at the current X for each linearization (including its
rotation dependence in the plane-to-plane variants).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, DegenerateGeometryError, DegenerateMatchError
from .features import Feature, FeatureKind
from .geometry import Pose, Twist, between, compose, exp, log, skew
from .imu import ImuState, integrate
from .pointcloud import knn_indices


class InitMethod(enum.Enum):
    IDENTITY = "identity"
    CONSTANT_VELOCITY = "constant_velocity"
    IMU = "imu"


class ResidualVariant(enum.Enum):
    POINT_TO_POINT = "point_to_point"
    POINT_TO_EDGE = "point_to_edge"
    POINT_TO_PLANE = "point_to_plane"
    PSEUDO_POINT_TO_PLANE = "pseudo_point_to_plane"
    PLANE_TO_PLANE = "plane_to_plane"
    PSEUDO_PLANE_TO_PLANE = "pseudo_plane_to_plane"


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 30
    rotation_tol: float = 1e-5
    translation_tol: float = 1e-5
    max_correspondence_distance: float = 1.0
    re_match_every_iteration: bool = True
    huber_delta: float | None = None  # robust kernel, off by default
    condition_limit: float = 1e12
    # drop pairs whose normals/directions disagree by more than this angle
    # (rad); guards against cross-surface matches at junctions. None disables.
    max_normal_angle: float | None = math.radians(30.0)

    def __post_init__(self):
        if self.rotation_tol <= 0 or self.translation_tol <= 0:
            raise ValueError("tolerances must be > 0")


@dataclass(frozen=True, eq=False)
class Correspondence:
    source: Feature
    target: Feature


@dataclass(eq=False)
class IcpResult:
    pose: Pose
    iterations: int
    converged: bool
    final_cost: float
    correspondences_used: int
    cost_history: list = field(default_factory=list)


def init_identity() -> Pose:
    return Pose.identity()


def init_constant_velocity(prev_delta: Pose, prev_dt: float, dt: float) -> Pose:
    """Scale the previous pose delta's twist to the new interval length."""
    if prev_dt <= 0:
        raise ValueError("prev_dt must be > 0")
    if dt == prev_dt:
        return prev_delta
    return exp(log(prev_delta).scaled(dt / prev_dt))


def init_imu(prev_pose: Pose, state: ImuState, measurements, t_prev: float, t_now: float) -> Pose:
    """Relative pose predicted by integrating the IMU from t_prev to t_now.

    ``state`` is the full state at t_prev; ``prev_pose`` is the pose the
    relative delta is taken against (normally state.pose itself).
    """
    out = integrate(state, measurements, t_prev, t_now)
    return between(prev_pose, out.trajectory.poses[-1])


def _positions(features: list[Feature]) -> np.ndarray:
    return np.array([f.position for f in features]).reshape(-1, 3)


class FeatureIndex:
    """Per-class deterministic nearest-feature lookup over a target feature set."""

    def __init__(self, features: list[Feature]):
        self.by_kind: dict[FeatureKind, list[Feature]] = {k: [] for k in FeatureKind}
        for f in features:
            self.by_kind[f.kind].append(f)
        self._trees = {}
        for kind, feats in self.by_kind.items():
            if feats:
                pos = _positions(feats)
                tie = np.lexsort((np.arange(len(feats)), [f.scanline for f in feats]))
                order = np.empty(len(feats), dtype=np.int64)
                order[tie] = np.arange(len(feats))
                self._trees[kind] = (cKDTree(pos), pos, order)

    def nearest(self, kind: FeatureKind, query: np.ndarray):
        entry = self._trees.get(kind)
        if entry is None:
            return None, np.inf
        tree, pos, order = entry
        idx = knn_indices(tree, pos, order, query, 1)
        i = int(idx[0])
        return self.by_kind[kind][i], float(np.linalg.norm(pos[i] - query))


def match(
    source_features: list[Feature],
    target_features: list[Feature],
    x0: Pose,
    cfg: IcpConfig,
    target_index: FeatureIndex | None = None,
) -> list[Correspondence]:
    """Nearest same-class target feature for each transformed source feature.

    Pairs farther than max_correspondence_distance are dropped, as are pairs
    whose normals (or edge directions), compared under the rotation of x0,
    disagree by more than cfg.max_normal_angle: the nearest same-class feature
    at a junction can sit on a different surface. Zero surviving pairs is a
    degenerate match.
    """
    index = target_index if target_index is not None else FeatureIndex(target_features)
    min_dot = math.cos(cfg.max_normal_angle) if cfg.max_normal_angle is not None else None
    rot = x0.rotation_matrix
    out = []
    for f in source_features:
        moved = x0.apply(f.position)
        tgt, dist = index.nearest(f.kind, moved)
        if tgt is None or dist > cfg.max_correspondence_distance:
            continue
        if min_dot is not None:
            if f.normal is not None and tgt.normal is not None:
                if abs(float((rot @ f.normal) @ tgt.normal)) < min_dot:
                    continue
            if f.direction is not None and tgt.direction is not None:
                if abs(float((rot @ f.direction) @ tgt.direction)) < min_dot:
                    continue
        out.append(Correspondence(f, tgt))
    if not out:
        raise DegenerateMatchError(
            f"degenerate match: no correspondences within "
            f"{cfg.max_correspondence_distance} m from {len(source_features)} features"
        )
    return out


def _effective_variant(corr: Correspondence, variant: ResidualVariant) -> ResidualVariant:
    """Mixed feature sets weight each pair by its own class.

    The configured variant applies to planar pairs; edge pairs always use the
    edge annihilator and point pairs the identity.
    """
    kind = corr.target.kind
    if kind is FeatureKind.EDGE:
        return ResidualVariant.POINT_TO_EDGE
    if kind is FeatureKind.POINT:
        return ResidualVariant.POINT_TO_POINT
    return variant


def weighting(corr: Correspondence, variant: ResidualVariant, x: Pose,
              epsilon: float = 0.0) -> np.ndarray:
    """Symmetric PSD weighting matrix Lambda for one correspondence."""
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError(f"epsilon must be in [0, 1], got {epsilon}")
    eye = np.eye(3)
    if variant is ResidualVariant.POINT_TO_POINT:
        return eye
    if variant is ResidualVariant.POINT_TO_EDGE:
        d = corr.target.direction
        if d is None:
            raise ConfigError("point-to-edge weighting requires a target edge direction")
        return eye - np.outer(d, d)
    n_i = corr.target.normal
    if n_i is None:
        raise ConfigError(f"{variant.value} weighting requires a target normal")
    nn_i = np.outer(n_i, n_i)
    if variant is ResidualVariant.POINT_TO_PLANE:
        return nn_i
    if variant is ResidualVariant.PSEUDO_POINT_TO_PLANE:
        return (1.0 - epsilon) * nn_i + epsilon * eye
    n_j = corr.source.normal
    if n_j is None:
        raise ConfigError(f"{variant.value} weighting requires a source normal")
    rn = x.rotation_matrix @ n_j
    nn_j = np.outer(rn, rn)
    if variant is ResidualVariant.PLANE_TO_PLANE:
        return nn_i + nn_j
    return (1.0 - epsilon) * (nn_i + nn_j) + 2.0 * epsilon * eye


def residual(corr: Correspondence, x: Pose) -> np.ndarray:
    """r(X) = p_target - X p_source."""
    return corr.target.position - x.apply(corr.source.position)


def residual_jacobian(corr: Correspondence, x: Pose) -> np.ndarray:
    """d r / d delta for the right perturbation X o exp(delta), delta=(omega, v)."""
    r = x.rotation_matrix
    return np.hstack([r @ skew(corr.source.position), -r])


def _linearize(correspondences, variant, x, epsilon, huber_delta):
    """Accumulate the 6x6 normal equations with Lambda frozen at x."""
    h = np.zeros((6, 6))
    g = np.zeros(6)
    cost = 0.0
    rot = x.rotation_matrix
    for corr in correspondences:
        lam = weighting(corr, _effective_variant(corr, variant), x, epsilon)
        r = corr.target.position - (rot @ corr.source.position + x.t)
        if huber_delta is not None:
            s = float(np.sqrt(max(r @ lam @ r, 0.0)))
            if s > huber_delta:
                lam = lam * (huber_delta / s)
        j = np.hstack([rot @ skew(corr.source.position), -rot])
        jl = j.T @ lam
        h += jl @ j
        g += jl @ r
        cost += float(r @ lam @ r)
    return h, g, cost


def _check_conditioning(h: np.ndarray, limit: float) -> None:
    eigval, eigvec = np.linalg.eigh(h)
    lo, hi = float(eigval[0]), float(eigval[-1])
    if lo <= 0.0 or hi / lo > limit:
        direction = eigvec[:, 0]
        raise DegenerateGeometryError(
            "degenerate geometry: normal equations condition number "
            f"{'inf' if lo <= 0 else f'{hi / lo:.3e}'} exceeds {limit:.0e}; "
            f"near-null direction (omega, v) = {np.array2string(direction, precision=4)}",
            null_direction=direction,
        )


def solve(
    source_features: list[Feature],
    target_features: list[Feature],
    variant: ResidualVariant,
    x0: Pose,
    cfg: IcpConfig,
    epsilon: float = 0.0,
) -> IcpResult:
    """Gauss-Newton ICP from x0; see the module docstring for conventions."""
    x = x0
    target_index = FeatureIndex(target_features)
    correspondences = match(source_features, target_features, x, cfg, target_index)
    cost_history: list[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        if cfg.re_match_every_iteration and iterations > 1:
            correspondences = match(source_features, target_features, x, cfg, target_index)
        h, g, cost = _linearize(correspondences, variant, x, epsilon, cfg.huber_delta)
        cost_history.append(cost)
        _check_conditioning(h, cfg.condition_limit)
        delta = np.linalg.solve(h, -g)
        x = compose(x, exp(Twist.from_vector(delta)))
        if (
            np.linalg.norm(delta[:3]) < cfg.rotation_tol
            and np.linalg.norm(delta[3:]) < cfg.translation_tol
        ):
            converged = True
            break
    _, _, final_cost = _linearize(correspondences, variant, x, epsilon, cfg.huber_delta)
    return IcpResult(
        pose=x,
        iterations=iterations,
        converged=converged,
        final_cost=final_cost,
        correspondences_used=len(correspondences),
        cost_history=cost_history,
    )
