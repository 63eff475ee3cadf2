"""
Continuous REBA-style upper-limb scoring

Scores are piecewise-linear interpolants through REBA anchor points so the
posture optimizer gets usable slopes. Per arm, the shoulder score combines
the flexion/extension curve with continuous "+1" ramps for abduction and
rotation; the elbow score is a band around 60-100 degrees of flexion. The
bimanual score is the worse of the two arms.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .skeleton import ArmState, Side
from .utils import ArrayLike

logger = logging.getLogger(__name__)

DEFAULT_SHOULDER_ANCHORS: Tuple[Tuple[float, float], ...] = (
    (-math.pi / 3, 2.0),
    (-2 * math.pi / 9, 1.0),
    (0.0, 0.0),
    (2 * math.pi / 9, 1.0),
    (math.pi / 4, 2.0),
    (math.pi / 2, 3.0),
    (math.pi, 4.0),
)

# anatomical elbow flexion (radians) -> score
DEFAULT_ELBOW_ANCHORS: Tuple[Tuple[float, float], ...] = (
    (0.0, 2.0),
    (math.radians(60), 1.0),
    (math.radians(100), 1.0),
    (math.radians(150), 2.0),
)

DEFAULT_ABDUCTION_RAMP = (math.pi / 6, math.pi / 3)
DEFAULT_ROTATION_RAMP = (math.pi / 4, math.pi / 2)


@dataclass(frozen=True)
class PiecewiseLinear:
    """Piecewise-linear function through anchors, extended linearly past both ends"""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise ValueError("need at least two anchors with matching x/y")
        if np.any(np.diff(x) <= 0):
            raise ValueError("anchor angles must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_anchors(cls, anchors: Sequence[Tuple[float, float]]) -> "PiecewiseLinear":
        xs, ys = zip(*anchors)
        return cls(np.array(xs), np.array(ys))

    def _segment(self, v: float) -> int:
        return int(np.clip(np.searchsorted(self.x, v, side="right") - 1, 0, self.x.size - 2))

    def slope(self, v: float) -> float:
        i = self._segment(v)
        return float((self.y[i + 1] - self.y[i]) / (self.x[i + 1] - self.x[i]))

    def __call__(self, v: float) -> float:
        i = self._segment(v)
        t = (v - self.x[i]) / (self.x[i + 1] - self.x[i])
        return float(self.y[i] + (self.y[i + 1] - self.y[i]) * t)


def _ramp(value: float, start: float, end: float) -> Tuple[float, float]:
    """0 below start, 1 above end, linear in between; returns (value, slope)"""
    if value <= start:
        return 0.0, 0.0
    if value >= end:
        return 1.0, 0.0
    return (value - start) / (end - start), 1.0 / (end - start)


@dataclass(frozen=True)
class ArmScore:
    s_shoulder: float
    s_elbow: float

    @property
    def s_arm(self) -> float:
        return self.s_shoulder + self.s_elbow


@dataclass(frozen=True)
class ErgonomicScore:
    """Per-arm scores and the bimanual worst case"""

    left: ArmScore
    right: ArmScore

    @property
    def s_left(self) -> float:
        return self.left.s_arm

    @property
    def s_right(self) -> float:
        return self.right.s_arm

    @property
    def s_overall(self) -> float:
        return max(self.s_left, self.s_right)

    @property
    def worst_side(self) -> Side:
        return Side.LEFT if self.s_left >= self.s_right else Side.RIGHT


@dataclass(frozen=True)
class ErgonomicModel:
    """Configurable scoring curves"""

    shoulder_anchors: Tuple[Tuple[float, float], ...] = DEFAULT_SHOULDER_ANCHORS
    elbow_anchors: Tuple[Tuple[float, float], ...] = DEFAULT_ELBOW_ANCHORS
    abduction_ramp: Tuple[float, float] = DEFAULT_ABDUCTION_RAMP
    rotation_ramp: Tuple[float, float] = DEFAULT_ROTATION_RAMP
    _shoulder: PiecewiseLinear = field(init=False, repr=False, compare=False)
    _elbow: PiecewiseLinear = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_shoulder", PiecewiseLinear.from_anchors(self.shoulder_anchors))
        object.__setattr__(self, "_elbow", PiecewiseLinear.from_anchors(self.elbow_anchors))

    def shoulder_flexion(self, q2: float) -> float:
        return self._shoulder(q2)

    def elbow(self, q4: float) -> float:
        # model angle -> anatomical flexion (q4 = -pi/2 is the straight arm)
        return self._elbow(q4 + math.pi / 2)

    def arm(self, q: ArrayLike) -> ArmScore:
        q1, q2, q3, q4 = np.asarray(q, dtype=float)
        abduction, _ = _ramp(abs(q1), *self.abduction_ramp)
        rotation, _ = _ramp(abs(q3), *self.rotation_ramp)
        return ArmScore(self.shoulder_flexion(q2) + abduction + rotation, self.elbow(q4))

    def arm_gradient(self, q: ArrayLike) -> np.ndarray:
        """Gradient of the per-arm score s_shoulder + s_elbow w.r.t. q (one-sided at kinks)"""
        q1, q2, q3, q4 = np.asarray(q, dtype=float)
        _, d_abd = _ramp(abs(q1), *self.abduction_ramp)
        _, d_rot = _ramp(abs(q3), *self.rotation_ramp)
        return np.array(
            [
                d_abd * np.sign(q1),
                self._shoulder.slope(q2),
                d_rot * np.sign(q3),
                self._elbow.slope(q4 + math.pi / 2),
            ]
        )

    def bimanual(self, q_left: ArmState, q_right: ArmState) -> ErgonomicScore:
        return ErgonomicScore(self.arm(q_left.q), self.arm(q_right.q))


DEFAULT_MODEL = ErgonomicModel()


def shoulder_score(q2: float, model: ErgonomicModel = DEFAULT_MODEL) -> float:
    """
    Continuous shoulder flexion/extension score

    Args:
        q2: Shoulder flexion angle (radians, flexion positive)
        model: Scoring curves

    Returns:
        Score >= 0; 0 at q2 = 0, 1 at 2pi/9, 2 at pi/4, 3 at pi/2, 4 at pi
    """
    return model.shoulder_flexion(q2)


def elbow_score(q4: float, model: ErgonomicModel = DEFAULT_MODEL) -> float:
    """
    Continuous elbow score

    Args:
        q4: Elbow model angle; flexion is q4 + pi/2

    Returns:
        1 on the 60-100 degree flexion band, rising linearly to 2 at the
        straight arm and at 150 degrees of flexion
    """
    return model.elbow(q4)


def bimanual_score(q_left: ArmState, q_right: ArmState, model: ErgonomicModel = DEFAULT_MODEL) -> ErgonomicScore:
    """Per-arm scores and their maximum"""
    return model.bimanual(q_left, q_right)
