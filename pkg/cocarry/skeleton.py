"""
Simplified 4-DOF upper-limb kinematic model

Joint conventions (right arm, torso frame: x to the body's left, y forward,
z up):
    q1  shoulder abduction/adduction, rotation about y (positive = abduction)
    q2  shoulder flexion/extension, rotation about x (positive = flexion)
    q3  shoulder internal/external rotation, rotation about z
    q4  elbow, rotation about x; q4 = -pi/2 is the straight arm, 0 a right angle

The wrist sits at p_w = p_s + R1 R2 R3 (d_ua + R4 d_fa) with
d_ua = [0, 0, -d_ua] and d_fa = [0, d_fa, 0]. The left arm uses the same
chain reflected across the sagittal plane (x -> -x), so both arms share one
joint box.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Tuple

import numpy as np

from .utils import ArrayLike, as_vector, rot_x, rot_y, rot_z, skew, X_AXIS, Y_AXIS, Z_AXIS

if TYPE_CHECKING:
    from .ik import SkeletonFrame

logger = logging.getLogger(__name__)

JOINT_LOWER = np.array([-math.pi / 18, -math.pi / 3, -math.pi / 3, -math.pi / 2])
JOINT_UPPER = np.array([17 * math.pi / 18, 17 * math.pi / 18, math.pi / 2, math.pi / 3])
JOINT_NAMES = ("q1", "q2", "q3", "q4")

# Rotation axes of R1..R4
_AXES = (Y_AXIS, X_AXIS, Z_AXIS, X_AXIS)
_GENERATORS = tuple(skew(axis) for axis in _AXES)
_ROTATIONS = (rot_y, rot_x, rot_z, rot_x)

_MIRROR = np.diag([-1.0, 1.0, 1.0])


class Side(str, Enum):
    """Arm side"""
    LEFT = "left"
    RIGHT = "right"


def joint_bounds(n_arms: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Lower/upper joint box, tiled for ``n_arms`` stacked arms"""
    return np.tile(JOINT_LOWER, n_arms), np.tile(JOINT_UPPER, n_arms)


def within_limits(q: ArrayLike, tolerance: float = 1e-12) -> bool:
    q = np.asarray(q, dtype=float)
    lower, upper = joint_bounds(q.size // 4)
    return bool(np.all(q >= lower - tolerance) and np.all(q <= upper + tolerance))


def mirror_matrix(side: Side) -> np.ndarray:
    """Reflection taking the right-arm model frame to the given arm's frame"""
    return _MIRROR if Side(side) is Side.LEFT else np.eye(3)


@dataclass(frozen=True)
class ArmState:
    """Joint angles of one arm"""

    q: np.ndarray
    side: Side = Side.RIGHT

    def __post_init__(self):
        object.__setattr__(self, "q", as_vector(self.q, 4, "q"))
        object.__setattr__(self, "side", Side(self.side))

    def within_limits(self, tolerance: float = 1e-12) -> bool:
        return within_limits(self.q, tolerance)

    @classmethod
    def zero(cls, side: Side = Side.RIGHT) -> "ArmState":
        return cls(np.zeros(4), side)


@dataclass(frozen=True)
class BodyGeometry:
    """Segment lengths and shoulder origins in the torso frame (meters)"""

    d_ua: float
    d_fa: float
    p_s_left: np.ndarray
    p_s_right: np.ndarray

    def __post_init__(self):
        if not (self.d_ua > 0 and self.d_fa > 0):
            raise ValueError(f"segment lengths must be positive (d_ua={self.d_ua}, d_fa={self.d_fa})")
        left = as_vector(self.p_s_left, 3, "p_s_left")
        right = as_vector(self.p_s_right, 3, "p_s_right")
        if np.allclose(left, right):
            raise ValueError("left and right shoulder origins must be distinct")
        object.__setattr__(self, "d_ua", float(self.d_ua))
        object.__setattr__(self, "d_fa", float(self.d_fa))
        object.__setattr__(self, "p_s_left", left)
        object.__setattr__(self, "p_s_right", right)

    @property
    def reach(self) -> float:
        return self.d_ua + self.d_fa

    def shoulder(self, side: Side) -> np.ndarray:
        return self.p_s_left if Side(side) is Side.LEFT else self.p_s_right

    def scaled(self, factor: float) -> "BodyGeometry":
        """Geometry with segment lengths and shoulder offsets multiplied by ``factor``"""
        return BodyGeometry(
            self.d_ua * factor, self.d_fa * factor, self.p_s_left * factor, self.p_s_right * factor
        )


@dataclass(frozen=True)
class ArmPoints:
    """Shoulder, elbow and wrist positions in the torso frame"""

    p_s: np.ndarray
    p_e: np.ndarray
    p_w: np.ndarray

    def __post_init__(self):
        for name in ("p_s", "p_e", "p_w"):
            object.__setattr__(self, name, as_vector(getattr(self, name), 3, name))

    @property
    def upper_arm_length(self) -> float:
        return float(np.linalg.norm(self.p_e - self.p_s))

    @property
    def forearm_length(self) -> float:
        return float(np.linalg.norm(self.p_w - self.p_e))


def rotation_matrices(q: ArrayLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """R1 (about y), R2 (about x), R3 (about z), R4 (about x) for the given angles"""
    q = as_vector(q, 4, "q")
    return tuple(rotation(angle) for rotation, angle in zip(_ROTATIONS, q))


def _chain(q: np.ndarray, d_ua: float, d_fa: float, orders: Tuple[int, int, int, int], elbow: bool = False) -> np.ndarray:
    """
    Derivative of the right-arm chain R1 R2 R3 (a + R4 b) in the model frame

    ``orders[i]`` is how many times joint i is differentiated (0, 1 or 2);
    dR/dq = R K and d2R/dq2 = R K K for the joint's axis generator K.
    With ``elbow`` the forearm term is dropped.
    """
    mats = []
    for i, (rotation, gen) in enumerate(zip(_ROTATIONS, _GENERATORS)):
        m = rotation(q[i])
        for _ in range(orders[i]):
            m = m @ gen
        mats.append(m)

    a = np.array([0.0, 0.0, -d_ua])
    b = np.array([0.0, d_fa, 0.0])
    if elbow:
        if orders[3]:
            return np.zeros(3)
        tail = a
    elif orders[3]:
        tail = mats[3] @ b
    else:
        tail = a + mats[3] @ b
    return mats[0] @ (mats[1] @ (mats[2] @ tail))


def forward_kinematics(state: ArmState, geom: BodyGeometry) -> ArmPoints:
    """
    Elbow and wrist positions of one arm

    Args:
        state: Joint angles and side
        geom: Body geometry

    Returns:
        ArmPoints in the torso frame
    """
    m = mirror_matrix(state.side)
    p_s = geom.shoulder(state.side)
    zero = (0, 0, 0, 0)
    p_e = p_s + m @ _chain(state.q, geom.d_ua, geom.d_fa, zero, elbow=True)
    p_w = p_s + m @ _chain(state.q, geom.d_ua, geom.d_fa, zero)
    return ArmPoints(p_s, p_e, p_w)


def _unit_orders(*joints: int) -> Tuple[int, int, int, int]:
    orders = [0, 0, 0, 0]
    for j in joints:
        orders[j] += 1
    return tuple(orders)


def position_jacobian(state: ArmState, geom: BodyGeometry) -> np.ndarray:
    """3x4 wrist position Jacobian; column i is dp_w/dq_i"""
    m = mirror_matrix(state.side)
    columns = [_chain(state.q, geom.d_ua, geom.d_fa, _unit_orders(i)) for i in range(4)]
    return m @ np.column_stack(columns)


def elbow_jacobian(state: ArmState, geom: BodyGeometry) -> np.ndarray:
    """3x4 elbow position Jacobian (last column is zero)"""
    m = mirror_matrix(state.side)
    columns = [_chain(state.q, geom.d_ua, geom.d_fa, _unit_orders(i), elbow=True) for i in range(4)]
    return m @ np.column_stack(columns)


def jacobian_derivatives(state: ArmState, geom: BodyGeometry) -> np.ndarray:
    """
    Partial derivatives of the wrist Jacobian

    Returns:
        Array of shape (4, 3, 4); entry [j] is dJ/dq_j
    """
    m = mirror_matrix(state.side)
    out = np.empty((4, 3, 4))
    for j in range(4):
        columns = [_chain(state.q, geom.d_ua, geom.d_fa, _unit_orders(i, j)) for i in range(4)]
        out[j] = m @ np.column_stack(columns)
    return out


def calibrate_geometry(frames: Iterable["SkeletonFrame"]) -> BodyGeometry:
    """
    Estimate body geometry from observed frames

    Segment lengths are the medians of the observed shoulder-elbow and
    elbow-wrist distances pooled over both arms; shoulder origins are the
    per-arm median shoulder positions.

    Raises:
        ValueError: If no frames are given
    """
    upper, fore, left_sh, right_sh = [], [], [], []
    for frame in frames:
        for side in Side:
            points = frame.arm(side)
            upper.append(points.upper_arm_length)
            fore.append(points.forearm_length)
        left_sh.append(frame.left.p_s)
        right_sh.append(frame.right.p_s)

    if not upper:
        raise ValueError("cannot calibrate geometry from an empty frame sequence")

    geom = BodyGeometry(
        d_ua=float(np.median(upper)),
        d_fa=float(np.median(fore)),
        p_s_left=np.median(np.vstack(left_sh), axis=0),
        p_s_right=np.median(np.vstack(right_sh), axis=0),
    )
    logger.info(f"Calibrated geometry from {len(left_sh)} frames: d_ua={geom.d_ua:.4f} m, d_fa={geom.d_fa:.4f} m")
    return geom
