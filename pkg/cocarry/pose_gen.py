"""
Robot end-effector targets from optimized human wrist positions

The rotation that carries the initial left-to-right wrist vector onto the
optimized one (minimal rotation, Rodrigues form) is applied rigidly to the
object and both robot end effectors about the human's left wrist, which is
then moved to its optimized position. Object orientations are updated by
pre-multiplying with the same world-frame rotation.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .exceptions import DegenerateAntiparallel
from .utils import ArrayLike, as_vector, matrix_to_quat, normalize_quaternion, quat_to_matrix, rodrigues, rot_z

logger = logging.getLogger(__name__)

ANTIPARALLEL_TOLERANCE = 1e-8


@dataclass(frozen=True)
class Pose:
    """Position (m) and unit quaternion (w, x, y, z)"""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "position", as_vector(self.position, 3, "position"))
        object.__setattr__(self, "orientation", normalize_quaternion(self.orientation))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def transformed(self, rotation: np.ndarray, pivot: np.ndarray, destination: np.ndarray) -> "Pose":
        """Rotate about ``pivot`` by ``rotation`` and translate the pivot to ``destination``"""
        return Pose(
            destination + rotation @ (self.position - pivot),
            matrix_to_quat(rotation @ self.rotation),
        )


@dataclass(frozen=True)
class GraspConfiguration:
    """Human wrists (initial and optimized), object and robot end effectors, all in the robot frame"""

    wrist_left: np.ndarray
    wrist_right: np.ndarray
    wrist_left_opt: np.ndarray
    wrist_right_opt: np.ndarray
    object_pose: Pose
    ee_left: Pose
    ee_right: Pose

    def __post_init__(self):
        for name in ("wrist_left", "wrist_right", "wrist_left_opt", "wrist_right_opt"):
            object.__setattr__(self, name, as_vector(getattr(self, name), 3, name))


@dataclass(frozen=True)
class GeneratedTargets:
    object_pose: Pose
    ee_left: Pose
    ee_right: Pose
    rotation: np.ndarray
    angle: float
    antiparallel: bool = False


def torso_to_robot(point: ArrayLike, origin: ArrayLike, yaw: float) -> np.ndarray:
    """
    Map a torso-frame point (x left, y forward, z up) into the robot frame

    The human stands at ``origin`` facing along ``yaw`` (about robot z).
    """
    p = as_vector(point, 3, "point")
    forward_left_up = np.array([p[1], p[0], p[2]])
    return as_vector(origin, 3, "origin") + rot_z(yaw) @ forward_left_up


def robot_to_torso_direction(direction: ArrayLike, yaw: float) -> np.ndarray:
    """Express a robot-frame direction in the torso frame (inverse rotation of torso_to_robot)"""
    forward_left_up = rot_z(yaw).T @ as_vector(direction, 3, "direction")
    return np.array([forward_left_up[1], forward_left_up[0], forward_left_up[2]])


def rotation_axis_angle(v_init: ArrayLike, v_opt: ArrayLike) -> Tuple[np.ndarray, float, bool]:
    """
    Axis, angle and antiparallel flag of the minimal rotation taking v_init to v_opt

    Raises:
        ValueError: If either vector is zero
    """
    a = as_vector(v_init, 3, "v_init")
    b = as_vector(v_opt, 3, "v_opt")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("rotation vectors must be nonzero")
    a, b = a / na, b / nb

    if np.linalg.norm(a + b) < ANTIPARALLEL_TOLERANCE:
        # any axis orthogonal to a works; take the one least aligned with a
        helper = np.eye(3)[int(np.argmin(np.abs(a)))]
        axis = np.cross(a, helper)
        return axis / np.linalg.norm(axis), math.pi, True

    cross = np.cross(a, b)
    sin_angle = float(np.linalg.norm(cross))
    angle = math.atan2(sin_angle, float(a @ b))
    if sin_angle == 0.0:
        return np.array([0.0, 0.0, 1.0]), 0.0, False
    return cross / sin_angle, angle, False


def relative_rotation(v_init: ArrayLike, v_opt: ArrayLike, strict: bool = False) -> np.ndarray:
    """
    Minimal rotation matrix R with R v_init/|v_init| = v_opt/|v_opt|

    Args:
        v_init: Initial vector
        v_opt: Target vector
        strict: Raise on antiparallel vectors instead of flagging

    Raises:
        DegenerateAntiparallel: Vectors are opposite and ``strict`` is set
    """
    axis, angle, antiparallel = rotation_axis_angle(v_init, v_opt)
    if antiparallel:
        if strict:
            raise DegenerateAntiparallel(
                "wrist vectors are antiparallel; rotation axis is not unique",
                details={"v_init": np.asarray(v_init).tolist(), "v_opt": np.asarray(v_opt).tolist()},
            )
        logger.warning(f"Antiparallel wrist vectors; rotating pi about {axis.round(6).tolist()}")
    return rodrigues(axis, angle)


def generate_targets(grasp: GraspConfiguration, strict: bool = False) -> GeneratedTargets:
    """
    Updated object pose and robot end-effector poses

    Args:
        grasp: Grasp configuration in the robot frame
        strict: Raise DegenerateAntiparallel instead of flagging

    Returns:
        GeneratedTargets
    """
    v_init = grasp.wrist_left - grasp.wrist_right
    v_opt = grasp.wrist_left_opt - grasp.wrist_right_opt
    _, angle, antiparallel = rotation_axis_angle(v_init, v_opt)
    rotation = relative_rotation(v_init, v_opt, strict=strict)

    pivot, destination = grasp.wrist_left, grasp.wrist_left_opt
    object_pose = grasp.object_pose.transformed(rotation, pivot, destination)
    # the end effectors follow the object rigidly
    ee_left = grasp.ee_left.transformed(rotation, grasp.object_pose.position, object_pose.position)
    ee_right = grasp.ee_right.transformed(rotation, grasp.object_pose.position, object_pose.position)

    logger.info(
        f"Generated targets: rotation {math.degrees(angle):.2f} deg, "
        f"object moved {np.linalg.norm(object_pose.position - grasp.object_pose.position):.4f} m"
    )
    return GeneratedTargets(object_pose, ee_left, ee_right, rotation, angle, antiparallel)
