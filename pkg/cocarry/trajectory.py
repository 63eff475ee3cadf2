"""
Minimum-jerk Cartesian trajectories for the robot end effectors

Positions move along the straight line scaled by s(tau) = 10 tau^3 - 15 tau^4 + 6 tau^5.
Orientations rotate about the constant world axis of the start-to-end
relative rotation (shortest arc) with the same profile.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from .pose_gen import Pose
from .utils import export_to_csv, quat_from_scipy, quat_to_scipy

logger = logging.getLogger(__name__)


def min_jerk_scalar(tau: float) -> Tuple[float, float, float]:
    """
    Minimum-jerk time scaling and its first two derivatives w.r.t. tau

    Args:
        tau: Normalized time in [0, 1]

    Returns:
        (s, ds/dtau, d2s/dtau2)
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    t2 = tau * tau
    t3 = t2 * tau
    s = t3 * (10.0 - 15.0 * tau + 6.0 * t2)
    ds = 30.0 * t2 * (1.0 - tau) ** 2
    dds = 60.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau)
    return s, ds, dds


@dataclass(frozen=True)
class TimingLimits:
    v_max: float = 0.25
    omega_max: float = 0.5
    t_min: float = 2.0


@dataclass(frozen=True)
class MinJerkSegment:
    start: Pose
    end: Pose
    duration: float
    rate: float = 100.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.rate <= 0:
            raise ValueError("sample rate must be positive")


@dataclass(frozen=True)
class Trajectory:
    """Sampled trajectory; velocities are [v (3), omega (3)] in the world frame"""

    t: np.ndarray
    positions: np.ndarray
    orientations: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    def pose(self, index: int) -> Pose:
        return Pose(self.positions[index], self.orientations[index])

    def states(self) -> np.ndarray:
        """Per-sample translational state [p, v]"""
        return np.hstack([self.positions, self.velocities[:, :3]])

    def to_frame(self, prefix: str = "") -> pd.DataFrame:
        columns = {}
        for i, axis in enumerate("xyz"):
            columns[f"{prefix}{axis}"] = self.positions[:, i]
        for i, comp in enumerate(("qw", "qx", "qy", "qz")):
            columns[f"{prefix}{comp}"] = self.orientations[:, i]
        for i, comp in enumerate(("vx", "vy", "vz", "wx", "wy", "wz")):
            columns[f"{prefix}{comp}"] = self.velocities[:, i]
        return pd.DataFrame(columns)


@dataclass(frozen=True)
class DualTrajectory:
    left: Trajectory
    right: Trajectory

    @property
    def t(self) -> np.ndarray:
        return self.left.t

    def to_frame(self) -> pd.DataFrame:
        return pd.concat(
            [pd.DataFrame({"t": self.t}), self.left.to_frame("left_"), self.right.to_frame("right_")],
            axis=1,
        )


def snap_steps(duration: float, rate: float) -> int:
    """Whole sample periods covering duration"""
    return int(math.ceil(duration * rate - 1e-9))


def default_duration(start: Pose, end: Pose, limits: TimingLimits = TimingLimits()) -> float:
    """max(|dp| / v_max, rotation angle / omega_max, t_min)"""
    distance = float(np.linalg.norm(end.position - start.position))
    relative = quat_to_scipy(end.orientation) * quat_to_scipy(start.orientation).inv()
    angle = float(np.linalg.norm(relative.as_rotvec()))
    return max(distance / limits.v_max, angle / limits.omega_max, limits.t_min)


def plan(seg: MinJerkSegment) -> Trajectory:
    """
    Sample a minimum-jerk segment

    Args:
        seg: Segment with start/end poses, duration and sample rate

    Returns:
        Trajectory sampled every 1 / rate seconds. A duration off that grid is
        rounded up to the next whole sample period. The first and last samples
        equal the segment endpoints exactly
    """
    steps = max(snap_steps(seg.duration, seg.rate), 1)
    duration = steps / seg.rate
    t = np.arange(steps + 1) / seg.rate
    tau = np.clip(t / duration, 0.0, 1.0)
    profile = np.array([min_jerk_scalar(x) for x in tau])
    s, ds, dds = profile[:, 0], profile[:, 1] / duration, profile[:, 2] / duration ** 2

    delta = seg.end.position - seg.start.position
    positions = seg.start.position + s[:, None] * delta
    velocities_lin = ds[:, None] * delta
    accelerations = dds[:, None] * delta

    start_rot = quat_to_scipy(seg.start.orientation)
    rotvec = (quat_to_scipy(seg.end.orientation) * start_rot.inv()).as_rotvec()
    orientations = np.vstack([quat_from_scipy(Rotation.from_rotvec(si * rotvec) * start_rot) for si in s])
    omegas = ds[:, None] * rotvec

    positions[0], positions[-1] = seg.start.position, seg.end.position
    orientations[0], orientations[-1] = seg.start.orientation, seg.end.orientation
    velocities_lin[[0, -1]] = 0.0
    omegas[[0, -1]] = 0.0
    accelerations[[0, -1]] = 0.0

    return Trajectory(t, positions, orientations, np.hstack([velocities_lin, omegas]), accelerations)


def plan_dual(
    start_left: Pose,
    end_left: Pose,
    start_right: Pose,
    end_right: Pose,
    limits: TimingLimits = TimingLimits(),
    rate: float = 100.0,
    duration: Optional[float] = None,
) -> DualTrajectory:
    """
    Plan both arms on one shared duration and time grid

    The duration defaults to the larger of the two arms' default durations.
    Either way it is rounded up to a whole number of sample periods, so the
    grid spacing is exactly 1 / rate.
    """
    if duration is None:
        duration = max(default_duration(start_left, end_left, limits), default_duration(start_right, end_right, limits))
    if duration <= 0 or rate <= 0:
        raise ValueError("duration and sample rate must be positive")
    duration = max(snap_steps(duration, rate), 1) / rate
    left = plan(MinJerkSegment(start_left, end_left, duration, rate))
    right = plan(MinJerkSegment(start_right, end_right, duration, rate))
    logger.info(f"Planned dual-arm trajectory: T={duration:.3f} s, {len(left)} samples")
    return DualTrajectory(left, right)


def export_trajectory_csv(trajectory: DualTrajectory, path: Union[str, Path]) -> Path:
    """Write t, then x, y, z, qw..qz, vx..wz per arm"""
    return export_to_csv(trajectory.to_frame(), path)


def peak_speed(trajectory: Trajectory) -> float:
    return float(np.max(np.linalg.norm(trajectory.velocities[:, :3], axis=1)))


def path_length(trajectory: Trajectory) -> float:
    return float(np.sum(np.linalg.norm(np.diff(trajectory.positions, axis=0), axis=1)))


def rotation_angle(trajectory: Trajectory) -> float:
    relative = quat_to_scipy(trajectory.orientations[-1]) * quat_to_scipy(trajectory.orientations[0]).inv()
    return float(np.linalg.norm(relative.as_rotvec()))
