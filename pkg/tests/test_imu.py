import math

import numpy as np
import pytest

from lidarodom.errors import CoverageGapError
from lidarodom.geometry import Pose, Twist, between, exp
from lidarodom.imu import ImuMeasurement, ImuState, integrate

GRAVITY = np.array([0.0, 0.0, -9.81])


def stationary_stream(rate, t_end, accel=None, omega=None):
    n = int(round(rate * t_end)) + 1
    stamps = np.arange(n) / rate
    omega = np.zeros(3) if omega is None else np.asarray(omega)
    accel = -GRAVITY if accel is None else np.asarray(accel)
    return [ImuMeasurement(t, omega, accel) for t in stamps]


class TestIntegrate:
    def test_force_balance_advances_linearly(self):
        v = np.array([1.0, 0.5, 0.0])
        state = ImuState(velocity=v.copy())
        out = integrate(state, stationary_stream(100.0, 1.0), 0.0, 1.0)
        final = out.trajectory.poses[-1]
        np.testing.assert_allclose(final.t, v, atol=1e-9)
        assert final.rotation_angle() < 1e-12

    def test_constant_yaw_rate(self):
        meas = stationary_stream(200.0, 1.0, omega=[0.0, 0.0, 1.0])
        out = integrate(ImuState(), meas, 0.0, 1.0)
        final = out.trajectory.poses[-1]
        # rotation increments are exact exponentials, so yaw composes exactly
        assert final.rotation_angle() == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(final.t, 0.0, atol=1e-6)

    def test_empty_interval(self):
        state = ImuState(pose=Pose.from_rotvec([0.1, 0, 0], [1, 2, 3]))
        out = integrate(state, stationary_stream(100.0, 1.0), 0.5, 0.5)
        assert len(out.trajectory) == 1
        assert out.trajectory.poses[0] is state.pose

    def test_bias_subtraction(self):
        bias = np.array([0.02, -0.01, 0.03])
        meas = stationary_stream(100.0, 1.0, omega=bias)
        out = integrate(ImuState(gyro_bias=bias.copy()), meas, 0.0, 1.0)
        assert out.trajectory.poses[-1].rotation_angle() < 1e-12

    def test_gap_detection(self):
        meas = stationary_stream(100.0, 1.0)
        gappy = [m for m in meas if not (0.3 < m.stamp < 0.5)]
        with pytest.raises(CoverageGapError, match="gap"):
            integrate(ImuState(), gappy, 0.0, 1.0)

    def test_split_chaining_matches_one_shot(self):
        rng = np.random.default_rng(11)
        meas = [
            ImuMeasurement(t, rng.normal(0, 0.4, 3), -GRAVITY + rng.normal(0, 0.5, 3))
            for t in np.arange(0.0, 1.005, 0.01)
        ]
        one = integrate(ImuState(), meas, 0.0, 1.0)
        split_t = 0.47  # a measurement stamp
        first = integrate(ImuState(), meas, 0.0, split_t)
        second = integrate(first.final_state, meas, split_t, 1.0)
        d = between(one.trajectory.poses[-1], second.trajectory.poses[-1])
        assert np.linalg.norm(d.t) < 1e-9
        assert d.rotation_angle() < 1e-9

    def test_refinement_converges(self):
        # smooth synthetic signal: constant screw; halving dt reduces the error
        twist = Twist(np.array([0.0, 0.0, 0.8]), np.array([1.0, 0.0, 0.0]))
        truth = exp(twist)  # pose at t=1

        def run(rate):
            stamps = np.arange(0.0, 1.0 + 0.5 / rate, 1.0 / rate)
            meas = []
            for t in stamps:
                pose = exp(twist.scaled(t))
                r = pose.rotation_matrix
                omega = twist.angular
                # world accel of a constant screw: d/dt (R v) = R (w x v)
                accel_world = r @ np.cross(omega, twist.linear)
                meas.append(ImuMeasurement(t, omega, r.T @ (accel_world - GRAVITY)))
            v0_world = twist.linear  # R(0) = I
            out = integrate(ImuState(velocity=v0_world), meas, 0.0, 1.0)
            final = out.trajectory.poses[-1]
            d = between(truth, final)
            return np.linalg.norm(d.t) + d.rotation_angle()

        errs = [run(r) for r in (100.0, 200.0, 400.0, 800.0)]
        assert all(e1 > e2 for e1, e2 in zip(errs, errs[1:]))

    def test_samples_at_measurement_stamps(self):
        meas = stationary_stream(10.0, 1.0)
        out = integrate(ImuState(), meas, 0.05, 0.75)
        np.testing.assert_allclose(out.trajectory.stamps[0], 0.05)
        np.testing.assert_allclose(out.trajectory.stamps[-1], 0.75)
        interior = out.trajectory.stamps[1:-1]
        assert all(abs(s * 10 - round(s * 10)) < 1e-9 for s in interior)
