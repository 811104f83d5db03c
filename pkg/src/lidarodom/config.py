"""Experiment configuration: schema, validation, resolution and hashing.

A config file is YAML; every CLI flag mirrors a key and flags win. The
resolved config serializes canonically (sorted JSON) so a sweep cell has a
stable hash for resuming and for determinism checks.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any

import yaml

from .dewarp import DewarpMethod
from .errors import ConfigError
from .features import CurvatureMethod, FeatureParams, FeatureSet
from .registration import IcpConfig, ResidualVariant


class InitChoice:
    """Pipeline-level initialization selector.

    Extends the registration-level methods with the evaluation-only
    ground-truth mode (the initializer reads the gt trajectory).
    """

    IDENTITY = "identity"
    CONSTANT_VELOCITY = "constant_velocity"
    IMU = "imu"
    GROUND_TRUTH = "ground_truth"
    ALL = (IDENTITY, CONSTANT_VELOCITY, IMU, GROUND_TRUTH)


MOTION_SOURCES = ("ground_truth", "estimate")

# residuals that read normals off planar features
_NORMAL_RESIDUALS = {
    ResidualVariant.POINT_TO_PLANE,
    ResidualVariant.PSEUDO_POINT_TO_PLANE,
    ResidualVariant.PLANE_TO_PLANE,
    ResidualVariant.PSEUDO_PLANE_TO_PLANE,
}


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple = ()
    output_dir: str = "out"
    dewarp: DewarpMethod = DewarpMethod.NONE
    init: str = InitChoice.GROUND_TRUTH
    curvature: CurvatureMethod = CurvatureMethod.CLASSICAL
    feature_set: FeatureSet = FeatureSet.PLANAR_AND_EDGE
    feature_params: FeatureParams = field(default_factory=FeatureParams)
    residual: ResidualVariant = ResidualVariant.POINT_TO_PLANE
    epsilon: float = 0.0
    icp: IcpConfig = field(default_factory=IcpConfig)
    window_seconds: float = 10.0
    max_scans: int = 3000
    seed: int = 0
    record_runtime: bool = True
    dewarp_motion_source: str = "ground_truth"
    init_motion_source: str = "estimate"
    skip_failed: bool = False
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.init not in InitChoice.ALL:
            raise ConfigError(f"init must be one of {InitChoice.ALL}, got {self.init!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.dewarp_motion_source not in MOTION_SOURCES:
            raise ConfigError(f"dewarp_motion_source must be one of {MOTION_SOURCES}")
        if self.init_motion_source not in MOTION_SOURCES:
            raise ConfigError(f"init_motion_source must be one of {MOTION_SOURCES}")
        if self.residual in _NORMAL_RESIDUALS and self.feature_set is FeatureSet.POINT:
            raise ConfigError(
                f"residual {self.residual.value} needs planar normals; "
                f"feature set {self.feature_set.value} provides none"
            )
        if self.max_scans < 2:
            raise ConfigError("max_scans must be >= 2")
        if self.window_seconds <= 0:
            raise ConfigError("window_seconds must be > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


_ENUM_FIELDS = {
    "dewarp": DewarpMethod,
    "curvature": CurvatureMethod,
    "residual": ResidualVariant,
}


def _enum(cls, value, key):
    try:
        return cls(value)
    except ValueError:
        raise ConfigError(
            f"{key} must be one of {[m.value for m in cls]}, got {value!r}"
        )


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc or {})
    kwargs: dict[str, Any] = {}
    datasets = doc.pop("dataset", doc.pop("datasets", ()))
    if isinstance(datasets, str):
        datasets = (datasets,)
    kwargs["datasets"] = tuple(datasets)
    feat = dict(doc.pop("features", {}) or {})
    if "set" in feat:
        kwargs["feature_set"] = _enum(FeatureSet, feat.pop("set"), "features.set")
    try:
        kwargs["feature_params"] = FeatureParams(**feat)
    except TypeError as e:
        raise ConfigError(f"unknown features key: {e}")
    icp = dict(doc.pop("icp", {}) or {})
    try:
        kwargs["icp"] = IcpConfig(**icp)
    except TypeError as e:
        raise ConfigError(f"unknown icp key: {e}")
    for key, cls in _ENUM_FIELDS.items():
        if key in doc:
            kwargs[key] = _enum(cls, doc.pop(key), key)
    doc.pop("sweep", None)
    for key in (
        "output_dir", "init", "epsilon", "window_seconds", "max_scans", "seed",
        "record_runtime", "dewarp_motion_source", "init_motion_source",
        "skip_failed", "workers",
    ):
        if key in doc:
            kwargs[key] = doc.pop(key)
    if doc:
        raise ConfigError(f"unknown config keys: {sorted(doc)}")
    try:
        cfg = ExperimentConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e))
    return cfg.validate()


def config_to_dict(cfg: ExperimentConfig) -> dict:
    fp = cfg.feature_params
    return {
        "dataset": list(cfg.datasets),
        "output_dir": cfg.output_dir,
        "dewarp": cfg.dewarp.value,
        "init": cfg.init,
        "curvature": cfg.curvature.value,
        "features": {
            "set": cfg.feature_set.value,
            "window_half_size": fp.window_half_size,
            "planar_threshold": fp.planar_threshold,
            "edge_threshold": fp.edge_threshold,
            "knn_k": fp.knn_k,
            "min_scanline_spread": fp.min_scanline_spread,
            "max_per_class_per_scanline": fp.max_per_class_per_scanline,
            "edge_radius": fp.edge_radius,
            "normal_knn": fp.normal_knn,
            "normal_fit_rms": fp.normal_fit_rms,
        },
        "residual": cfg.residual.value,
        "epsilon": cfg.epsilon,
        "icp": {
            "max_iterations": cfg.icp.max_iterations,
            "rotation_tol": cfg.icp.rotation_tol,
            "translation_tol": cfg.icp.translation_tol,
            "max_correspondence_distance": cfg.icp.max_correspondence_distance,
            "re_match_every_iteration": cfg.icp.re_match_every_iteration,
            "huber_delta": cfg.icp.huber_delta,
            "condition_limit": cfg.icp.condition_limit,
            "max_normal_angle": cfg.icp.max_normal_angle,
        },
        "window_seconds": cfg.window_seconds,
        "max_scans": cfg.max_scans,
        "seed": cfg.seed,
        "record_runtime": cfg.record_runtime,
        "dewarp_motion_source": cfg.dewarp_motion_source,
        "init_motion_source": cfg.init_motion_source,
        "skip_failed": cfg.skip_failed,
        "workers": cfg.workers,
    }


def load_config(path) -> tuple[ExperimentConfig, dict]:
    """Parse a config file; returns (config, sweep axes)."""
    with open(path) as f:
        doc = yaml.safe_load(f) or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    sweep = doc.get("sweep") or {}
    if not isinstance(sweep, dict):
        raise ConfigError(f"{path}: sweep must map axis names to value lists")
    return config_from_dict(doc), sweep


def config_hash(cfg: ExperimentConfig) -> str:
    doc = config_to_dict(cfg)
    doc.pop("output_dir", None)
    doc.pop("workers", None)
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


SWEEP_AXES = {
    "dewarp": lambda cfg, v: replace(cfg, dewarp=_enum(DewarpMethod, v, "dewarp")),
    "init": lambda cfg, v: replace(cfg, init=v),
    "curvature": lambda cfg, v: replace(cfg, curvature=_enum(CurvatureMethod, v, "curvature")),
    "features": lambda cfg, v: replace(cfg, feature_set=_enum(FeatureSet, v, "features")),
    "residual": lambda cfg, v: replace(cfg, residual=_enum(ResidualVariant, v, "residual")),
    "epsilon": lambda cfg, v: replace(cfg, epsilon=float(v)),
    "window_seconds": lambda cfg, v: replace(cfg, window_seconds=float(v)),
    "re_match": lambda cfg, v: replace(cfg, icp=replace(cfg.icp, re_match_every_iteration=bool(v))),
}


def sweep_cells(base: ExperimentConfig, axes: dict) -> list[ExperimentConfig]:
    """Cartesian product over the declared axes, in a deterministic order."""
    unknown = set(axes) - set(SWEEP_AXES)
    if unknown:
        raise ConfigError(f"unknown sweep axes: {sorted(unknown)} (valid: {sorted(SWEEP_AXES)})")
    cells = [base]
    for axis in sorted(axes):
        values = axes[axis]
        if not isinstance(values, (list, tuple)) or not values:
            raise ConfigError(f"sweep axis {axis} must be a non-empty list")
        apply = SWEEP_AXES[axis]
        cells = [apply(cfg, v) for cfg in cells for v in values]
    return [c.validate() for c in cells]


def dump_config_yaml(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
