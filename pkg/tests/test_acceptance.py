"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion
lines; every tolerance and time budget is asserted, not just reported.
"""

import math
import time

import numpy as np
import pytest

from conftest import DEFAULT_MODEL, EXACT_PARAMS, extract_exact, random_delta, room_scene, scan_at
from lidarodom.config import config_from_dict
from lidarodom.dewarp import dewarp_constant_velocity, dewarp_imu
from lidarodom.features import FeatureKind
from lidarodom.geometry import (
    Pose,
    Trajectory,
    Twist,
    between,
    compose,
    exp,
    interpolate,
    log,
)
from lidarodom.generate import generate_dataset
from lidarodom.imu import ImuState, integrate
from lidarodom.metrics import (
    associate,
    ate_rotation,
    ate_translation,
    percent_change,
    rte_rotation,
    rte_translation,
    wrte_rotation,
    wrte_translation,
)
from lidarodom.pipeline import run_odometry, run_sweep
from lidarodom.registration import (
    Correspondence,
    IcpConfig,
    ResidualVariant,
    residual,
    residual_jacobian,
    solve,
    weighting,
)
from lidarodom.synthworld import (
    LidarModel,
    Pole,
    ScrewTrajectory,
    SurfaceTexture,
    box_room,
    simulate_imu,
    simulate_scan,
)

from test_registration import edge_feature, planar_feature, point_feature


class Budget:
    """Times a criterion and prints its verdict line."""

    def __init__(self, name, seconds):
        self.name = name
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        status = "PASS" if exc_type is None else "FAIL"
        print(f"[{status}] {self.name}: {elapsed:.2f}s (budget {self.seconds}s)")
        if exc_type is None:
            assert elapsed < self.seconds, f"{self.name} exceeded {self.seconds}s budget"
        return False


def rnd_pose(rng, max_angle=2.8, max_trans=10.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose.from_rotvec(axis * rng.uniform(-max_angle, max_angle),
                            rng.uniform(-max_trans, max_trans, 3))


def _random_twist(rng, max_angle=math.pi - 2e-3):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Twist(axis * rng.uniform(0.0, max_angle), rng.uniform(-5, 5, 3))


def pose_gap(a, b):
    d = between(a, b)
    return max(float(np.linalg.norm(d.t)), d.rotation_angle())


def test_geometry_algebra():
    with Budget("geometry algebra (10k cases, 1e-9)", 5.0):
        rng = np.random.default_rng(2024)
        worst = 0.0
        # 10,000 random cases, spread over the operation families
        for _ in range(4000):
            a, b, c = rnd_pose(rng), rnd_pose(rng), rnd_pose(rng)
            worst = max(worst, abs(np.linalg.norm(compose(a, b).q) - 1.0))
            worst = max(worst, pose_gap(compose(a, a.inverse()), Pose.identity()))
            worst = max(worst, pose_gap(compose(compose(a, b), c), compose(a, compose(b, c))))
            worst = max(worst, pose_gap(compose(a, between(a, b)), b))
        for _ in range(3000):
            t = _random_twist(rng)
            rt = log(exp(t))
            worst = max(worst, float(np.linalg.norm(rt.angular - t.angular)))
            worst = max(worst, float(np.linalg.norm(rt.linear - t.linear)))
        for _ in range(3000):
            a, b = rnd_pose(rng, max_angle=1.4), rnd_pose(rng, max_angle=1.4)
            alpha = rng.uniform(0, 1)
            mid = interpolate(a, b, alpha)
            full = log(between(a, b))
            worst = max(
                worst,
                abs(between(a, mid).rotation_angle() - alpha * np.linalg.norm(full.angular)),
            )
        assert worst < 1e-9, f"worst geometry deviation {worst:.3e}"


def test_jacobian_matches_finite_differences():
    with Budget("residual Jacobian vs central differences (1e-5 rel)", 5.0):
        rng = np.random.default_rng(7)
        h = 1e-6
        worst = 0.0
        for _ in range(1000):
            x = rnd_pose(rng, max_angle=2.5, max_trans=5.0)
            corr = Correspondence(point_feature(rng.normal(size=3) * 5.0),
                                  point_feature(rng.normal(size=3) * 5.0))
            jac = residual_jacobian(corr, x)
            num = np.zeros((3, 6))
            for k in range(6):
                d = np.zeros(6)
                d[k] = h
                rp = residual(corr, compose(x, exp(Twist.from_vector(d))))
                rm = residual(corr, compose(x, exp(Twist.from_vector(-d))))
                num[:, k] = (rp - rm) / (2 * h)
            scale = max(np.abs(num).max(), 1.0)
            worst = max(worst, float(np.abs(jac - num).max() / scale))
        assert worst < 1e-5, f"worst relative Jacobian error {worst:.3e}"


def test_weighting_algebra():
    with Budget("weighting algebra (PSD, annihilator, eps endpoints)", 5.0):
        rng = np.random.default_rng(11)
        eye = np.eye(3)
        for _ in range(50):
            n_i = rng.normal(size=3)
            n_i /= np.linalg.norm(n_i)
            n_j = rng.normal(size=3)
            n_j /= np.linalg.norm(n_j)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            x = rnd_pose(rng, max_angle=2.0, max_trans=2.0)
            planar = Correspondence(planar_feature(rng.normal(size=3), n_j),
                                    planar_feature(rng.normal(size=3), n_i))
            edge = Correspondence(point_feature(rng.normal(size=3)),
                                  edge_feature(rng.normal(size=3), d))
            for eps in (0.0, 0.25, 0.5, 0.75, 1.0):
                for variant in ResidualVariant:
                    corr = edge if variant is ResidualVariant.POINT_TO_EDGE else planar
                    lam = weighting(corr, variant, x, eps)
                    assert np.abs(lam - lam.T).max() <= 1e-12
                    assert np.linalg.eigvalsh(lam).min() >= -1e-12
            a = weighting(edge, ResidualVariant.POINT_TO_EDGE, x)
            assert np.abs(a @ a - a).max() <= 1e-12
            assert np.abs(a @ d).max() <= 1e-12
            proj = np.outer(n_i, n_i)
            assert np.abs((eye - proj) @ n_i).max() <= 1e-12
            # epsilon endpoints recover the named variants exactly
            assert np.array_equal(
                weighting(planar, ResidualVariant.PSEUDO_POINT_TO_PLANE, x, 0.0),
                weighting(planar, ResidualVariant.POINT_TO_PLANE, x),
            )
            assert np.array_equal(
                weighting(planar, ResidualVariant.PSEUDO_POINT_TO_PLANE, x, 1.0), eye
            )
            assert np.array_equal(
                weighting(planar, ResidualVariant.PSEUDO_PLANE_TO_PLANE, x, 0.0),
                weighting(planar, ResidualVariant.PLANE_TO_PLANE, x),
            )
            assert np.array_equal(
                weighting(planar, ResidualVariant.PSEUDO_PLANE_TO_PLANE, x, 1.0), 2.0 * eye
            )


def test_oracle_recovery():
    with Budget("oracle recovery (100 deltas, <1e-3, >=99/100)", 60.0):
        target = [f for f in extract_exact(scan_at(Pose.identity()))
                  if f.kind is FeatureKind.PLANAR]
        rng = np.random.default_rng(5)
        ok = 0
        for _ in range(100):
            delta = random_delta(rng, max_trans=0.3, max_angle_deg=5.0)
            source = [f for f in extract_exact(scan_at(delta)) if f.kind is FeatureKind.PLANAR]
            res = solve(source, target, ResidualVariant.PLANE_TO_PLANE, delta, IcpConfig())
            d = between(res.pose, delta)
            if np.linalg.norm(d.t) < 1e-3 and d.rotation_angle() < 1e-3:
                ok += 1
        assert ok >= 99, f"only {ok}/100 deltas recovered within 1e-3"


def test_dewarp_round_trip():
    with Budget("dewarp round-trip (constant screw, 1e-6 m/point)", 10.0):
        scene = room_scene()
        twist = Twist(np.array([0.02, -0.01, 0.5]), np.array([2.0, 0.4, -0.1]))
        traj = ScrewTrajectory(Pose.identity(), twist)
        warped, _ = simulate_scan(scene, traj, 0.0, DEFAULT_MODEL, warp=True)
        clean, _ = simulate_scan(scene, traj, 0.0, DEFAULT_MODEL, warp=False)
        prev_dt = 0.1
        by_cv = dewarp_constant_velocity(warped, exp(twist.scaled(prev_dt)), prev_dt)
        err_cv = np.abs(by_cv.positions - clean.positions).max()
        stamps = np.linspace(0.0, DEFAULT_MODEL.period, 41)
        sampled = Trajectory(stamps, [traj.pose_at(t) for t in stamps])
        by_imu = dewarp_imu(warped, sampled)
        err_imu = np.abs(by_imu.positions - clean.positions).max()
        assert err_cv < 1e-6, f"constant-velocity dewarp error {err_cv:.2e}"
        assert err_imu < 1e-6, f"imu dewarp error {err_imu:.2e}"


def test_imu_consistency():
    with Budget("imu consistency (error halves as rate doubles)", 10.0):
        twist = Twist(np.array([0.1, -0.05, 0.4]), np.array([0.8, 0.2, -0.1]))
        traj = ScrewTrajectory(Pose.from_rotvec([0, 0, 0.3], [1, 2, 0]), twist)
        truth = traj.pose_at(1.0)
        errs = []
        for rate in (100.0, 200.0, 400.0):
            meas = simulate_imu(traj, rate, 0.0, 1.0)
            p0 = traj.pose_at(0.0)
            v0 = p0.rotation_matrix @ twist.linear
            out = integrate(ImuState(pose=p0, velocity=v0), meas, 0.0, 1.0)
            d = between(truth, out.trajectory.poses[-1])
            errs.append(float(np.linalg.norm(d.t)) + d.rotation_angle())
        assert errs[0] > errs[1] > errs[2], f"errors not monotone: {errs}"


def _reference_metrics(gt, est, j):
    def angle(m):
        vec = 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
        return math.atan2(np.linalg.norm(vec), 0.5 * (np.trace(m[:3, :3]) - 1.0))

    gm = [p.matrix() for p in gt.poses]
    em = [p.matrix() for p in est.poses]
    ate_t = math.sqrt(np.mean(
        [np.linalg.norm((np.linalg.inv(g) @ e)[:3, 3]) ** 2 for g, e in zip(gm, em)]))
    ate_r = math.sqrt(np.mean([angle(np.linalg.inv(g) @ e) ** 2 for g, e in zip(gm, em)]))
    et, er = [], []
    for i in range(len(gm) - j):
        dg = np.linalg.inv(gm[i]) @ gm[i + j]
        de = np.linalg.inv(em[i]) @ em[i + j]
        rel = np.linalg.inv(dg) @ de
        et.append(np.linalg.norm(rel[:3, 3]) ** 2)
        er.append(angle(rel) ** 2)
    return ate_t, ate_r, math.sqrt(np.mean(et)), math.sqrt(np.mean(er))


def test_metrics_oracle():
    with Budget("metrics oracle (1e-12 vs double loop, wrte(1)==rte, linear drift)", 5.0):
        rng = np.random.default_rng(13)
        for _ in range(100):
            poses = [Pose.identity()]
            est_poses = [Pose.identity()]
            slip = random_delta(rng, max_trans=0.05, max_angle_deg=2.0)
            for _ in range(49):
                step = random_delta(rng, max_trans=0.5, max_angle_deg=20.0)
                poses.append(compose(poses[-1], step))
                est_poses.append(compose(est_poses[-1], compose(step, slip)))
            gt = Trajectory(np.arange(50) * 0.1, poses)
            est = Trajectory(np.arange(50) * 0.1, est_poses)
            paired = associate(gt, est, 1e-6)
            j = int(rng.integers(1, 20))
            ref = _reference_metrics(gt, est, j)
            assert abs(ate_translation(paired) - ref[0]) < 1e-12
            assert abs(ate_rotation(paired) - ref[1]) < 1e-12
            assert abs(wrte_translation(paired, j) - ref[2]) < 1e-12
            assert abs(wrte_rotation(paired, j) - ref[3]) < 1e-12
            assert wrte_translation(paired, 1) == rte_translation(paired)
            assert wrte_rotation(paired, 1) == rte_rotation(paired)
        # straight-line gt with constant forward slip: wrte is exactly linear in j
        n = 60
        gt = Trajectory(np.arange(n) * 0.1,
                        [Pose(np.array([0, 0, 0, 1.0]), np.array([0.4 * i, 0.0, 0.0]))
                         for i in range(n)])
        slip = Pose(np.array([0, 0, 0, 1.0]), np.array([0.02, 0.0, 0.0]))
        est_poses = [gt.poses[0]]
        for i in range(n - 1):
            step = between(gt.poses[i], gt.poses[i + 1])
            est_poses.append(compose(est_poses[-1], compose(step, slip)))
        est = Trajectory(gt.stamps.copy(), est_poses)
        paired = associate(gt, est, 1e-6)
        for j in range(1, 30):
            assert abs(wrte_translation(paired, j) - 0.02 * j) < 1e-12


TREND_MODEL = LidarModel(num_scanlines=16, points_per_line=512,
                         vertical_fov=(math.radians(-28.0), math.radians(28.0)))


def _trend_sequence(scene, twist, start, n, noise, seed, model=TREND_MODEL):
    traj = ScrewTrajectory(Pose(np.array([0, 0, 0, 1.0]), np.array(start, dtype=float)), twist)
    rng = np.random.default_rng(seed)
    scans = []
    for i in range(n):
        scan, _ = simulate_scan(scene, traj, i * model.period, model, warp=False,
                                rng=rng if noise > 0 else None, range_noise=noise)
        scans.append(scan)
    stamps = np.arange(-1, n + 2) * model.period
    gt = Trajectory(stamps, [traj.pose_at(float(t)) for t in stamps])
    return scans, gt


def _run(scans, gt, **overrides):
    features = overrides.pop("features")
    doc = {"window_seconds": 0.5, "max_scans": 100, "seed": 0, "features": features}
    doc.update(overrides)
    return run_odometry(scans, gt, config_from_dict(doc))


def test_trend_initialization_sensitivity():
    with Budget("trend: init sensitivity (point >= 5x planar percent change)", 120.0):
        scene = box_room((8.0, 6.0, 1.5), texture=SurfaceTexture(0.06, 2.0),
                         poles=[Pole([4.0, 3.0, -1.5], [0, 0, 1], 0.3, 3.0),
                                Pole([-3.0, 4.0, -1.5], [0, 0, 1], 0.25, 3.0)])
        twist = Twist(np.array([0, 0, 0.1]), np.array([3.0, 0.2, 0.0]))  # 0.3 m per scan
        scans, gt = _trend_sequence(scene, twist, [-2.5, -1.0, 0.0], 22, 0.005, seed=0)
        feat = {"normal_fit_rms": 0.02, "normal_knn": 32}
        wrte = {}
        for fs, residual in (("planar", "point_to_plane"), ("point", "point_to_point")):
            for init in ("constant_velocity", "identity"):
                out = _run(scans, gt, init=init, residual=residual,
                           features={**feat, "set": fs})
                wrte[(fs, init)] = out.report.wrte_trans
        c_planar = percent_change(wrte[("planar", "identity")],
                                  wrte[("planar", "constant_velocity")])
        c_point = percent_change(wrte[("point", "identity")],
                                 wrte[("point", "constant_velocity")])
        print(f"  C_planar={c_planar:.2f}%  C_point={c_point:.2f}%")
        assert c_point > 0, "point features not degraded by identity init"
        assert c_point >= 5.0 * c_planar, (
            f"init sensitivity ratio too small: C_point={c_point:.2f}% "
            f"C_planar={c_planar:.2f}%"
        )


def test_trend_residual_family():
    with Budget("trend: plane-to-plane <= point-to-plane on 5 sequences", 120.0):
        model = LidarModel(num_scanlines=16, points_per_line=256,
                           vertical_fov=(math.radians(-28.0), math.radians(28.0)))

        def seq(half, poles, twist, start, seed):
            scene = box_room(half, poles=[
                Pole([x, y, -half[2]], [0, 0, 1], r, 2 * half[2]) for x, y, r in poles
            ])
            return _trend_sequence(scene, twist, start, 18, 0.01, seed, model=model)

        sequences = [
            seq((6.0, 5.0, 2.0), [(3.0, 2.0, 0.3)],
                Twist(np.array([0, 0, 0.05]), np.array([1.0, 0.1, 0])), [-2.0, -1.0, 0], 1),
            seq((8.0, 6.0, 2.5), [(4.0, 3.0, 0.3), (-3.0, 4.0, 0.25)],
                Twist(np.array([0, 0, -0.08]), np.array([1.5, 0.0, 0])), [-3.0, 0.0, 0], 2),
            seq((5.0, 7.0, 2.0), [(2.0, -3.0, 0.35)],
                Twist(np.array([0, 0, 0.1]), np.array([0.5, 1.0, 0])), [-1.0, -3.0, 0], 3),
            seq((7.0, 7.0, 2.2), [],
                Twist(np.array([0, 0, 0.06]), np.array([1.2, -0.5, 0])), [-2.0, 2.0, 0], 4),
            seq((6.0, 4.0, 1.8), [(-2.5, 1.5, 0.3)],
                Twist(np.array([0, 0, -0.05]), np.array([0.8, 0.3, 0])), [1.5, -1.0, 0], 5),
        ]
        for i, (scans, gt) in enumerate(sequences):
            vals = {}
            for residual in ("point_to_plane", "plane_to_plane"):
                out = _run(scans, gt, init="constant_velocity", residual=residual,
                           features={"set": "planar", "normal_fit_rms": 0.02})
                vals[residual] = out.report.wrte_trans
            print(f"  seq{i}: point_to_plane={vals['point_to_plane']:.5f} "
                  f"plane_to_plane={vals['plane_to_plane']:.5f}")
            assert vals["plane_to_plane"] <= vals["point_to_plane"], f"sequence {i} regressed"


def test_trend_pseudo_epsilon_degradation():
    with Budget("trend: wrte at eps=0 <= eps=1 under identity init", 60.0):
        model = LidarModel(num_scanlines=16, points_per_line=256,
                           vertical_fov=(math.radians(-28.0), math.radians(28.0)))
        scene = box_room((8.0, 6.0, 1.5),
                         poles=[Pole([4.0, 3.0, -1.5], [0, 0, 1], 0.3, 3.0),
                                Pole([-3.0, 4.0, -1.5], [0, 0, 1], 0.25, 3.0)])
        twist = Twist(np.array([0, 0, 0.1]), np.array([2.5, 0.3, 0.0]))
        scans, gt = _trend_sequence(scene, twist, [-2.5, -1.0, 0.0], 20, 0.01, seed=7,
                                    model=model)
        vals = {}
        for eps in (0.0, 1.0):
            out = _run(scans, gt, init="identity", residual="pseudo_point_to_plane",
                       epsilon=eps, features={"set": "planar", "normal_fit_rms": 0.02})
            vals[eps] = out.report.wrte_trans
        print(f"  wrte(eps=0)={vals[0.0]:.5f}  wrte(eps=1)={vals[1.0]:.5f}")
        assert vals[0.0] <= vals[1.0], f"eps=0 ({vals[0.0]}) worse than eps=1 ({vals[1.0]})"


def test_determinism(tmp_path):
    with Budget("determinism: byte-identical sweep results CSV", 60.0):
        doc = {
            "name": "det", "sequence": "00",
            "scene": {"box_room": {"half_widths": [6.0, 5.0, 2.0]},
                      "poles": [{"base": [3.0, 2.0, -2.0], "direction": [0, 0, 1],
                                 "radius": 0.3, "length": 4.0}]},
            "trajectory": {"kind": "screw",
                           "twist": {"angular": [0, 0, 0.05], "linear": [0.5, 0.05, 0]}},
            "lidar": {"num_scanlines": 16, "points_per_line": 256,
                      "vertical_fov_deg": [-28.0, 28.0], "period": 0.1},
            "num_scans": 8, "warp": False, "seed": 3, "range_noise": 0.01,
        }
        manifest = generate_dataset(doc, tmp_path / "data")
        base = config_from_dict({
            "dataset": str(manifest), "init": "ground_truth", "residual": "point_to_plane",
            "features": {"set": "planar"}, "window_seconds": 0.3, "max_scans": 100,
            "record_runtime": False, "seed": 0,
        })
        from lidarodom.config import sweep_cells

        cells = sweep_cells(base, {"init": ["identity", "ground_truth"]})
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_sweep(base, cells, a)
        run_sweep(base, cells, b)
        assert a.read_bytes() == b.read_bytes()
        assert len(a.read_text().splitlines()) == 3
