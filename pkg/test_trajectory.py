"""
Minimum-jerk trajectory planning
"""

import math

import numpy as np
import pandas as pd
import pytest
from scipy.spatial.transform import Rotation

from cocarry.pose_gen import Pose
from cocarry.trajectory import (
    MinJerkSegment,
    TimingLimits,
    default_duration,
    export_trajectory_csv,
    min_jerk_scalar,
    path_length,
    peak_speed,
    plan,
    plan_dual,
    rotation_angle,
)
from cocarry.utils import quat_angle_between, quat_from_scipy


def _yaw_pose(position, degrees):
    return Pose(position, quat_from_scipy(Rotation.from_euler("z", degrees, degrees=True)))


def test_min_jerk_profile():
    assert min_jerk_scalar(0.0) == (0.0, 0.0, 0.0)
    assert min_jerk_scalar(1.0) == (1.0, 0.0, 0.0)
    s, ds, dds = min_jerk_scalar(0.5)
    assert s == 0.5
    assert ds == pytest.approx(1.875)
    assert dds == pytest.approx(0.0)
    with pytest.raises(ValueError):
        min_jerk_scalar(1.1)


def test_segment_endpoints_and_boundary_derivatives():
    start, end = Pose([0.5, 0.2, 1.2]), _yaw_pose([0.7, 0.1, 1.3], 30)
    traj = plan(MinJerkSegment(start, end, 2.0, rate=100.0))

    assert len(traj) == 201
    assert traj.t[1] - traj.t[0] == pytest.approx(0.01)
    np.testing.assert_array_equal(traj.positions[0], start.position)
    np.testing.assert_array_equal(traj.positions[-1], end.position)
    np.testing.assert_array_equal(traj.orientations[-1], end.orientation)
    for index in (0, -1):
        assert np.all(traj.velocities[index] == 0.0)
        assert np.all(traj.accelerations[index] == 0.0)

    # the midpoint is halfway along the line and the rotation
    np.testing.assert_allclose(traj.positions[100], [0.6, 0.15, 1.25], atol=1e-12)
    assert quat_angle_between(start.orientation, traj.orientations[100]) == pytest.approx(math.radians(15), abs=1e-9)


def test_peak_speed_and_path_length():
    start, end = Pose([0.0, 0.0, 1.0]), Pose([0.3, 0.4, 1.0])
    traj = plan(MinJerkSegment(start, end, 2.5, rate=200.0))
    assert peak_speed(traj) == pytest.approx(1.875 * 0.5 / 2.5, rel=1e-6)
    assert path_length(traj) == pytest.approx(0.5, rel=1e-9)
    assert rotation_angle(traj) == pytest.approx(0.0, abs=1e-12)


def test_velocity_is_derivative_of_position():
    traj = plan(MinJerkSegment(Pose([0.0, 0.0, 0.0]), Pose([0.2, -0.1, 0.3]), 1.0, rate=1000.0))
    numeric = np.gradient(traj.positions, traj.t, axis=0)
    np.testing.assert_allclose(traj.velocities[1:-1, :3], numeric[1:-1], atol=1e-5)


def test_default_duration_rules():
    limits = TimingLimits(v_max=0.25, omega_max=0.5, t_min=2.0)
    assert default_duration(Pose([0, 0, 0]), Pose([0.1, 0, 0]), limits) == 2.0
    assert default_duration(Pose([0, 0, 0]), Pose([1.0, 0, 0]), limits) == pytest.approx(4.0)
    assert default_duration(Pose([0, 0, 0]), _yaw_pose([0, 0, 0], 180), limits) == pytest.approx(2 * math.pi)


def test_dual_arms_share_one_grid():
    traj = plan_dual(
        Pose([0.5, 0.2, 1.2]), Pose([0.5, 0.2, 1.2]),
        Pose([0.5, -0.2, 1.2]), Pose([1.0, -0.2, 1.2]),
        rate=100.0,
    )
    np.testing.assert_array_equal(traj.left.t, traj.right.t)
    assert traj.left.duration == pytest.approx(2.0)
    # the stationary arm never moves
    assert path_length(traj.left) == 0.0
    np.testing.assert_allclose(np.diff(traj.t), 0.01, atol=1e-12)


def test_duration_rounded_to_sample_period():
    traj = plan_dual(Pose([0, 0, 0]), Pose([0.5123, 0, 0]), Pose([0, 0.4, 0]), Pose([0, 0.4, 0]), rate=100.0)
    assert traj.left.duration == pytest.approx(2.05)
    assert len(traj.left) == 206


def test_off_grid_duration_snaps_to_sample_period():
    traj = plan(MinJerkSegment(Pose([0, 0, 0]), Pose([0.1, 0, 0]), 2.005, rate=100.0))
    assert len(traj) == 202
    assert traj.duration == pytest.approx(2.01)
    np.testing.assert_allclose(np.diff(traj.t), 0.01, atol=1e-12)
    np.testing.assert_array_equal(traj.positions[-1], [0.1, 0.0, 0.0])

    dual = plan_dual(Pose([0, 0, 0]), Pose([0.1, 0, 0]), Pose([0, 1, 0]), Pose([0.1, 1, 0]), duration=2.005, rate=100.0)
    assert len(dual.left) == len(dual.right) == 202
    np.testing.assert_allclose(np.diff(dual.t), 0.01, atol=1e-12)


def test_explicit_duration_overrides_limits():
    traj = plan_dual(Pose([0, 0, 0]), Pose([1, 0, 0]), Pose([0, 1, 0]), Pose([1, 1, 0]), duration=0.5, rate=50.0)
    assert traj.left.duration == 0.5
    assert len(traj.left) == 26


def test_invalid_segments():
    with pytest.raises(ValueError):
        MinJerkSegment(Pose([0, 0, 0]), Pose([1, 0, 0]), 0.0)
    with pytest.raises(ValueError):
        MinJerkSegment(Pose([0, 0, 0]), Pose([1, 0, 0]), 1.0, rate=0.0)


def test_export_columns(tmp_path):
    traj = plan_dual(Pose([0, 0, 0]), Pose([0.1, 0, 0]), Pose([0, 0.4, 0]), Pose([0.1, 0.4, 0]), rate=10.0)
    path = export_trajectory_csv(traj, tmp_path / "trajectory.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns[:4]) == ["t", "left_x", "left_y", "left_z"]
    assert "right_wz" in frame.columns
    assert len(frame) == 21
    assert frame["left_x"].iloc[-1] == pytest.approx(0.1)


def _jerk_integral(s, dt):
    """Integral of squared jerk for a rest-to-rest unit move, held at rest on both sides"""
    padded = np.concatenate([np.zeros(3), s, np.ones(3)])
    jerk = np.diff(padded, 3) / dt ** 3
    return float(np.sum(jerk ** 2) * dt)


def test_min_jerk_has_least_jerk():
    rate = 1000.0
    traj = plan(MinJerkSegment(Pose([0, 0, 0]), Pose([1, 0, 0]), 1.0, rate=rate))
    tau = traj.t
    cubic = 3.0 * tau ** 2 - 2.0 * tau ** 3
    # trapezoidal velocity, a third of the time each for ramp up, cruise and ramp down
    accel = 4.5
    trapezoid = np.where(
        tau < 1 / 3,
        0.5 * accel * tau ** 2,
        np.where(tau < 2 / 3, 0.25 + 1.5 * (tau - 1 / 3), 1.0 - 0.5 * accel * (1.0 - tau) ** 2),
    )

    dt = 1.0 / rate
    min_jerk = _jerk_integral(traj.positions[:, 0], dt)
    assert min_jerk == pytest.approx(720.0, rel=0.05)
    assert min_jerk <= _jerk_integral(cubic, dt)
    assert min_jerk <= _jerk_integral(trapezoid, dt)
