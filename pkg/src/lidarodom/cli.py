"""Command-line entry point: run one pipeline, sweep a grid, evaluate
trajectories, or generate synthetic datasets.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import yaml

from .config import (
    ExperimentConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    dump_config_yaml,
    load_config,
    sweep_cells,
)
from .dataio import append_result_row, load_dataset, read_trajectory, write_trajectory
from .errors import ConfigError, DataFormatError
from .generate import generate_dataset
from .metrics import associate, compute_report
from .pipeline import run_dataset, run_sweep

log = logging.getLogger(__name__)

EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _load_and_override(config_path, overrides: dict) -> tuple[ExperimentConfig, dict]:
    if config_path:
        cfg, axes = load_config(config_path)
    else:
        cfg, axes = config_from_dict({}), {}
    doc = config_to_dict(cfg)
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "dataset":
            doc["dataset"] = list(value) if isinstance(value, (list, tuple)) else [value]
        else:
            doc[key] = value
    return config_from_dict(doc), axes


def _report_lines(report) -> str:
    return "\n".join(
        [
            f"window: {report.window_seconds:g} s (j={report.window_steps})",
            f"ate_t:  {report.ate_trans:.6g} m    ate_r:  {report.ate_rot:.6g} rad",
            f"rte_t:  {report.rte_trans:.6g} m    rte_r:  {report.rte_rot:.6g} rad",
            f"wrte_t: {report.wrte_trans:.6g} m    wrte_r: {report.wrte_rot:.6g} rad",
        ]
    )


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


conf_opt = click.option("-c", "--config", "config_path", type=click.Path(exists=True),
                        help="YAML config file; flags override its keys.")


def _common_overrides(f):
    for name in ("dewarp", "init", "curvature", "residual"):
        f = click.option(f"--{name}")(f)
    f = click.option("--dataset", multiple=True, help="Dataset manifest path(s).")(f)
    f = click.option("--features", "feature_set", help="point|planar|planar_and_edge")(f)
    f = click.option("--epsilon", type=float)(f)
    f = click.option("--seed", type=int)(f)
    f = click.option("--max-scans", type=int)(f)
    f = click.option("--window-seconds", type=float)(f)
    f = click.option("--output-dir")(f)
    f = click.option("--workers", type=int)(f)
    f = click.option("--skip-failed", is_flag=True, default=None,
                     help="Skip scans whose processing fails instead of aborting.")(f)
    f = click.option("--print-config", is_flag=True, help="Print the resolved config and exit.")(f)
    return f


def _gather(dataset, dewarp, init, curvature, residual, epsilon, seed,
            max_scans, window_seconds, output_dir, workers, skip_failed) -> dict:
    return {
        "dataset": list(dataset) if dataset else None,
        "dewarp": dewarp, "init": init, "curvature": curvature, "residual": residual,
        "epsilon": epsilon, "seed": seed, "max_scans": max_scans,
        "window_seconds": window_seconds, "output_dir": output_dir, "workers": workers,
        "skip_failed": skip_failed,
    }


def _merge_feature_set(cfg_doc: dict, feature_set):
    if feature_set:
        cfg_doc.setdefault("features", {})
        cfg_doc["features"]["set"] = feature_set
    return cfg_doc


@main.command(help="Run one pipeline configuration over its dataset(s).")
@conf_opt
@_common_overrides
def run(config_path, dataset, dewarp, init, curvature, residual, feature_set, epsilon,
        seed, max_scans, window_seconds, output_dir, workers, skip_failed, print_config):
    try:
        overrides = _gather(dataset, dewarp, init, curvature, residual, epsilon,
                            seed, max_scans, window_seconds, output_dir, workers, skip_failed)
        cfg, _ = _load_and_override(config_path, overrides)
        if feature_set:
            doc = _merge_feature_set(config_to_dict(cfg), feature_set)
            cfg = config_from_dict(doc)
        if print_config:
            click.echo(dump_config_yaml(cfg), nl=False)
            return
        if not cfg.datasets:
            raise ConfigError("no dataset manifest given (config 'dataset' or --dataset)")
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        results_path = out_dir / "results.csv"
        for manifest_path in cfg.datasets:
            ds = load_dataset(manifest_path)
            out, row = run_dataset(ds, cfg)
            traj_path = out_dir / (
                f"{ds.manifest.name}_{ds.manifest.sequence}_{config_hash(cfg)}.txt"
            )
            write_trajectory(out.trajectory, traj_path)
            append_result_row(row, results_path)
            click.echo(f"{ds.manifest.name}/{ds.manifest.sequence}: "
                       f"trajectory -> {traj_path}")
            click.echo(_report_lines(out.report))
    except (ConfigError, DataFormatError) as e:
        _fail(e, EXIT_CONFIG)
    except Exception as e:  # noqa: BLE001
        _fail(e, EXIT_RUNTIME)


@main.command(help="Run the Cartesian sweep grid declared in the config.")
@conf_opt
@click.option("--results", "results_path", type=click.Path(), help="Results CSV path.")
@_common_overrides
def sweep(config_path, results_path, dataset, dewarp, init, curvature, residual,
          feature_set, epsilon, seed, max_scans, window_seconds, output_dir, workers,
          skip_failed, print_config):
    try:
        overrides = _gather(dataset, dewarp, init, curvature, residual, epsilon,
                            seed, max_scans, window_seconds, output_dir, workers, skip_failed)
        cfg, axes = _load_and_override(config_path, overrides)
        if feature_set:
            doc = _merge_feature_set(config_to_dict(cfg), feature_set)
            cfg = config_from_dict(doc)
        if print_config:
            click.echo(dump_config_yaml(cfg), nl=False)
            return
        if not cfg.datasets:
            raise ConfigError("no dataset manifest given (config 'dataset' or --dataset)")
        cells = sweep_cells(cfg, axes)
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        results = Path(results_path) if results_path else out_dir / "results.csv"
        ran = run_sweep(cfg, cells, results)
        click.echo(f"sweep complete: {ran} new cell(s), results -> {results}")
    except (ConfigError, DataFormatError) as e:
        _fail(e, EXIT_CONFIG)
    except Exception as e:  # noqa: BLE001
        _fail(e, EXIT_RUNTIME)


@main.command(help="Evaluate an estimated trajectory against ground truth.")
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
@click.option("--est", "est_path", required=True, type=click.Path(exists=True))
@click.option("--window-seconds", type=float, default=10.0, show_default=True)
@click.option("--max-dt", type=float, default=None,
              help="Association tolerance [s]; default half the median estimate period.")
@click.option("--csv", "csv_path", type=click.Path(), help="Also write metrics as CSV.")
def metrics(gt_path, est_path, window_seconds, max_dt, csv_path):
    try:
        gt = read_trajectory(gt_path)
        est = read_trajectory(est_path)
        if max_dt is None:
            import numpy as np

            max_dt = float(np.median(np.diff(est.stamps))) / 2 if len(est) > 1 else 0.05
        paired = associate(gt, est, max_dt)
        report = compute_report(paired, window_seconds)
        click.echo(_report_lines(report))
        if csv_path:
            import csv as _csv

            with open(csv_path, "w", newline="") as f:
                w = _csv.writer(f, lineterminator="\n")
                w.writerow(["ate_t", "rte_t", "wrte_t", "ate_r", "rte_r", "wrte_r",
                            "window_s", "window_j"])
                w.writerow([f"{report.ate_trans:.9g}", f"{report.rte_trans:.9g}",
                            f"{report.wrte_trans:.9g}", f"{report.ate_rot:.9g}",
                            f"{report.rte_rot:.9g}", f"{report.wrte_rot:.9g}",
                            f"{report.window_seconds:.9g}", str(report.window_steps)])
    except (ConfigError, DataFormatError) as e:
        _fail(e, EXIT_CONFIG)
    except Exception as e:  # noqa: BLE001
        _fail(e, EXIT_RUNTIME)


@main.command(help="Generate a synthetic dataset from a scene/trajectory spec.")
@click.option("-c", "--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def gen(config_path, out_dir):
    try:
        with open(config_path) as f:
            doc = yaml.safe_load(f) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{config_path}: gen config must be a mapping")
        manifest = generate_dataset(doc, out_dir)
        click.echo(f"dataset written: {manifest}")
    except (ConfigError, DataFormatError) as e:
        _fail(e, EXIT_CONFIG)
    except Exception as e:  # noqa: BLE001
        _fail(e, EXIT_RUNTIME)


def _fail(e: Exception, code: int) -> None:
    log.debug("failure detail", exc_info=e)
    click.echo(f"error: {e}", err=True)
    sys.exit(code)


if __name__ == "__main__":
    main()
