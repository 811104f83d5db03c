import math

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from lidarodom.cli import main
from lidarodom.config import config_from_dict, config_hash, load_config, sweep_cells
from lidarodom.dataio import load_dataset, read_trajectory
from lidarodom.errors import ConfigError
from lidarodom.generate import generate_dataset
from lidarodom.pipeline import run_dataset, run_odometry

GEN_DOC = {
    "name": "boxroom",
    "sequence": "00",
    "scene": {
        "box_room": {"half_widths": [6.0, 5.0, 2.0]},
        "poles": [{"base": [3.0, 2.0, -2.0], "direction": [0, 0, 1],
                   "radius": 0.3, "length": 4.0}],
    },
    "trajectory": {
        "kind": "screw",
        "twist": {"angular": [0.0, 0.0, 0.05], "linear": [0.4, 0.05, 0.0]},
    },
    "lidar": {"num_scanlines": 16, "points_per_line": 256,
              "vertical_fov_deg": [-28.0, 28.0], "period": 0.1},
    "imu": {"rate": 200.0},
    "num_scans": 12,
    "warp": False,
    "seed": 3,
}

BASE_CONFIG = {
    "dewarp": "none",
    "init": "ground_truth",
    "curvature": "classical",
    "features": {"set": "planar_and_edge", "normal_fit_rms": 1e-4},
    "residual": "point_to_plane",
    "window_seconds": 0.5,
    "max_scans": 100,
    "seed": 0,
}


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    manifest = generate_dataset(GEN_DOC, out)
    return manifest


class TestConfig:
    def test_defaults_validate(self):
        cfg = config_from_dict({})
        assert cfg.window_seconds == 10.0
        assert cfg.max_scans == 3000

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            config_from_dict({"dewrap": "none"})

    def test_incompatible_residual_feature_set(self):
        with pytest.raises(ConfigError, match="normals"):
            config_from_dict({"features": {"set": "point"}, "residual": "plane_to_plane"})

    def test_sweep_cells_cartesian(self):
        cfg = config_from_dict(BASE_CONFIG)
        cells = sweep_cells(cfg, {"epsilon": [0.0, 0.25, 0.5, 0.75, 1.0]})
        assert len(cells) == 5
        assert [c.epsilon for c in cells] == [0.0, 0.25, 0.5, 0.75, 1.0]

    def test_sweep_unknown_axis(self):
        cfg = config_from_dict(BASE_CONFIG)
        with pytest.raises(ConfigError, match="unknown sweep axes"):
            sweep_cells(cfg, {"bogus": [1]})

    def test_hash_changes_with_component(self):
        a = config_from_dict(BASE_CONFIG)
        b = config_from_dict({**BASE_CONFIG, "residual": "plane_to_plane"})
        assert config_hash(a) != config_hash(b)
        assert config_hash(a) == config_hash(config_from_dict(BASE_CONFIG))


class TestRunDataset:
    def test_gt_init_low_drift(self, dataset_dir):
        ds = load_dataset(dataset_dir)
        cfg = config_from_dict({**BASE_CONFIG, "dataset": str(dataset_dir)})
        out, row = run_dataset(ds, cfg)
        assert row.wrte_t < 1e-2
        assert row.dataset == "boxroom"
        assert len(out.trajectory) == 12

    def test_missing_imu_is_config_error(self, dataset_dir, tmp_path):
        doc = dict(GEN_DOC)
        doc = {**GEN_DOC, "imu": None, "num_scans": 4}
        manifest = generate_dataset(doc, tmp_path / "noimu")
        ds = load_dataset(manifest)
        cfg = config_from_dict({**BASE_CONFIG, "init": "imu"})
        with pytest.raises(ConfigError, match="IMU"):
            run_dataset(ds, cfg)

    @pytest.mark.parametrize("init", ["identity", "constant_velocity", "imu"])
    def test_all_inits_run(self, dataset_dir, init):
        ds = load_dataset(dataset_dir)
        cfg = config_from_dict({**BASE_CONFIG, "init": init})
        out, row = run_dataset(ds, cfg)
        assert row.init == init
        assert row.wrte_t < 0.1

    @pytest.mark.parametrize("dewarp", ["constant_velocity", "imu"])
    def test_dewarp_paths_run(self, tmp_path, dewarp):
        doc = {**GEN_DOC, "warp": True, "num_scans": 6}
        manifest = generate_dataset(doc, tmp_path / "warped")
        ds = load_dataset(manifest)
        cfg = config_from_dict({**BASE_CONFIG, "dewarp": dewarp})
        out, row = run_dataset(ds, cfg)
        assert row.dewarp == dewarp
        assert row.wrte_t < 0.05

    def test_deterministic_rows(self, dataset_dir):
        ds = load_dataset(dataset_dir)
        cfg = config_from_dict({**BASE_CONFIG, "record_runtime": False})
        _, row1 = run_dataset(ds, cfg)
        _, row2 = run_dataset(ds, cfg)
        assert row1.as_record() == row2.as_record()


class TestCli:
    def config_file(self, tmp_path, dataset_dir, extra=None):
        doc = {**BASE_CONFIG, "dataset": str(dataset_dir),
               "output_dir": str(tmp_path / "out")}
        doc.update(extra or {})
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump(doc))
        return path

    def test_run_subcommand(self, tmp_path, dataset_dir):
        runner = CliRunner()
        cfg = self.config_file(tmp_path, dataset_dir)
        result = runner.invoke(main, ["run", "-c", str(cfg)])
        assert result.exit_code == 0, result.output
        assert "wrte_t" in result.output
        out_dir = tmp_path / "out"
        assert (out_dir / "results.csv").exists()
        traj_files = list(out_dir.glob("boxroom_00_*.txt"))
        assert len(traj_files) == 1
        assert len(read_trajectory(traj_files[0])) == 12

    def test_print_config(self, tmp_path, dataset_dir):
        runner = CliRunner()
        cfg = self.config_file(tmp_path, dataset_dir)
        result = runner.invoke(main, ["run", "-c", str(cfg), "--print-config"])
        assert result.exit_code == 0
        doc = yaml.safe_load(result.output)
        assert doc["residual"] == "point_to_plane"

    def test_flags_override_config(self, tmp_path, dataset_dir):
        runner = CliRunner()
        cfg = self.config_file(tmp_path, dataset_dir)
        result = runner.invoke(
            main, ["run", "-c", str(cfg), "--residual", "plane_to_plane", "--print-config"]
        )
        assert result.exit_code == 0
        assert yaml.safe_load(result.output)["residual"] == "plane_to_plane"

    def test_config_error_exit_code(self, tmp_path, dataset_dir):
        runner = CliRunner()
        cfg = self.config_file(tmp_path, dataset_dir, {"init": "telepathy"})
        result = runner.invoke(main, ["run", "-c", str(cfg)])
        assert result.exit_code == 1
        assert "error:" in result.output

    def test_missing_dataset_is_config_error(self, tmp_path):
        runner = CliRunner()
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(BASE_CONFIG))
        result = runner.invoke(main, ["run", "-c", str(path)])
        assert result.exit_code == 1

    def test_metrics_subcommand(self, tmp_path, dataset_dir):
        runner = CliRunner()
        cfg = self.config_file(tmp_path, dataset_dir)
        assert runner.invoke(main, ["run", "-c", str(cfg)]).exit_code == 0
        traj = next((tmp_path / "out").glob("boxroom_00_*.txt"))
        ds = load_dataset(dataset_dir)
        result = runner.invoke(main, [
            "metrics", "--gt", str(ds.manifest.gt_path), "--est", str(traj),
            "--window-seconds", "0.5", "--csv", str(tmp_path / "m.csv"),
        ])
        assert result.exit_code == 0, result.output
        assert "wrte_t" in result.output
        assert (tmp_path / "m.csv").exists()

    def test_metrics_est_equals_gt_all_zero(self, tmp_path, dataset_dir):
        runner = CliRunner()
        ds = load_dataset(dataset_dir)
        gt = str(ds.manifest.gt_path)
        result = runner.invoke(main, ["metrics", "--gt", gt, "--est", gt,
                                      "--window-seconds", "0.5"])
        assert result.exit_code == 0
        for line in result.output.splitlines():
            if line.startswith(("ate", "rte", "wrte")):
                value = float(line.split()[1])
                assert value < 1e-9

    def test_metrics_disjoint_ranges_fails(self, tmp_path, dataset_dir):
        runner = CliRunner()
        ds = load_dataset(dataset_dir)
        est = tmp_path / "est.txt"
        est.write_text("100.0 0 0 0 0 0 0 1\n101.0 0 0 0 0 0 0 1\n")
        result = runner.invoke(main, ["metrics", "--gt", str(ds.manifest.gt_path),
                                      "--est", str(est)])
        assert result.exit_code == 2

    def test_gen_subcommand_round_trips(self, tmp_path):
        runner = CliRunner()
        gen_cfg = tmp_path / "gen.yaml"
        gen_cfg.write_text(yaml.safe_dump({**GEN_DOC, "num_scans": 3}))
        result = runner.invoke(main, ["gen", "-c", str(gen_cfg), "--out", str(tmp_path / "d")])
        assert result.exit_code == 0, result.output
        ds = load_dataset(tmp_path / "d" / "manifest.yaml")
        assert len(ds) == 3

    def test_gen_warp_changes_positions_only(self, tmp_path):
        on = generate_dataset({**GEN_DOC, "num_scans": 3, "warp": True}, tmp_path / "on")
        off = generate_dataset({**GEN_DOC, "num_scans": 3, "warp": False}, tmp_path / "off")
        ds_on, ds_off = load_dataset(on), load_dataset(off)
        for a, b in zip(ds_on.scans(), ds_off.scans()):
            np.testing.assert_array_equal(a.scanlines, b.scanlines)
            np.testing.assert_array_equal(a.time_offsets, b.time_offsets)
            assert not np.array_equal(a.positions, b.positions)

    def test_single_cell_sweep_matches_run(self, tmp_path, dataset_dir):
        runner = CliRunner()
        cfg = self.config_file(tmp_path, dataset_dir, {"record_runtime": False})
        results = tmp_path / "out" / "results.csv"
        assert runner.invoke(main, ["sweep", "-c", str(cfg), "--results", str(results)]).exit_code == 0
        sweep_rows = results.read_text().splitlines()
        assert len(sweep_rows) == 2  # header + the single cell
        run_results = tmp_path / "run.csv"
        assert runner.invoke(main, ["run", "-c", str(cfg)]).exit_code == 0
        run_rows = (tmp_path / "out" / "results.csv").read_text().splitlines()
        # run appended its row to the same CSV; the new row equals the sweep's
        assert run_rows[-1] == sweep_rows[-1]

    def test_gen_deterministic_bytes(self, tmp_path):
        runner = CliRunner()
        gen_cfg = tmp_path / "gen.yaml"
        gen_cfg.write_text(yaml.safe_dump({**GEN_DOC, "num_scans": 3, "range_noise": 0.01}))
        assert runner.invoke(main, ["gen", "-c", str(gen_cfg), "--out", str(tmp_path / "a")]).exit_code == 0
        assert runner.invoke(main, ["gen", "-c", str(gen_cfg), "--out", str(tmp_path / "b")]).exit_code == 0
        for pa in sorted((tmp_path / "a" / "scans").glob("*.lscn")):
            pb = tmp_path / "b" / "scans" / pa.name
            assert pa.read_bytes() == pb.read_bytes()

    def test_sweep_subcommand_and_resume(self, tmp_path, dataset_dir):
        runner = CliRunner()
        cfg = self.config_file(tmp_path, dataset_dir,
                               {"sweep": {"epsilon": [0.0, 0.5]},
                                "residual": "pseudo_point_to_plane",
                                "record_runtime": False})
        results = tmp_path / "out" / "results.csv"
        r1 = runner.invoke(main, ["sweep", "-c", str(cfg), "--results", str(results)])
        assert r1.exit_code == 0, r1.output
        assert "2 new cell(s)" in r1.output
        text1 = results.read_text()
        assert text1.count("\n") == 3  # header + 2 rows
        # resume: nothing new
        r2 = runner.invoke(main, ["sweep", "-c", str(cfg), "--results", str(results)])
        assert r2.exit_code == 0
        assert "0 new cell(s)" in r2.output
        assert results.read_text() == text1

    def test_sweep_byte_identical(self, tmp_path, dataset_dir):
        runner = CliRunner()
        cfg = self.config_file(tmp_path, dataset_dir,
                               {"sweep": {"init": ["identity", "ground_truth"]},
                                "record_runtime": False})
        out_a = tmp_path / "a.csv"
        out_b = tmp_path / "b.csv"
        assert runner.invoke(main, ["sweep", "-c", str(cfg), "--results", str(out_a)]).exit_code == 0
        assert runner.invoke(main, ["sweep", "-c", str(cfg), "--results", str(out_b)]).exit_code == 0
        assert out_a.read_bytes() == out_b.read_bytes()
