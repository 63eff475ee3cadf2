"""
Continuous upper-limb scoring
"""

import math

import numpy as np
import pytest

from cocarry.ergonomics import (
    ErgonomicModel,
    PiecewiseLinear,
    bimanual_score,
    elbow_score,
    shoulder_score,
)
from cocarry.skeleton import JOINT_LOWER, JOINT_UPPER, ArmState, Side


@pytest.mark.parametrize(
    "q2, expected",
    [
        (-math.pi / 3, 2.0),
        (-2 * math.pi / 9, 1.0),
        (0.0, 0.0),
        (2 * math.pi / 9, 1.0),
        (math.pi / 4, 2.0),
        (math.pi / 2, 3.0),
        (math.pi, 4.0),
    ],
)
def test_shoulder_anchors(q2, expected):
    assert shoulder_score(q2) == expected


@pytest.mark.parametrize(
    "flexion_deg, expected",
    [(0, 2.0), (60, 1.0), (80, 1.0), (100, 1.0), (150, 2.0)],
)
def test_elbow_anchors(flexion_deg, expected):
    assert elbow_score(math.radians(flexion_deg) - math.pi / 2) == pytest.approx(expected, abs=1e-12)


def test_elbow_model_angle():
    # q4 = 0 is a right angle, q4 = -pi/2 the straight arm
    assert elbow_score(0.0) == pytest.approx(1.0)
    assert elbow_score(-math.pi / 2) == pytest.approx(2.0)


def test_scores_are_continuous_at_breakpoints():
    model = ErgonomicModel()
    for x, _ in model.shoulder_anchors:
        assert abs(shoulder_score(x - 1e-12) - shoulder_score(x + 1e-12)) < 1e-9
    for x, _ in model.elbow_anchors:
        q4 = x - math.pi / 2
        assert abs(elbow_score(q4 - 1e-12) - elbow_score(q4 + 1e-12)) < 1e-9


def test_abduction_and_rotation_ramps():
    model = ErgonomicModel()
    base = model.arm([0.0, 0.0, 0.0, 0.0]).s_shoulder
    assert model.arm([math.pi / 3, 0.0, 0.0, 0.0]).s_shoulder == pytest.approx(base + 1.0)
    assert model.arm([math.pi / 4, 0.0, 0.0, 0.0]).s_shoulder == pytest.approx(base + 0.5)
    assert model.arm([0.0, 0.0, -math.pi / 2, 0.0]).s_shoulder == pytest.approx(base + 1.0)
    assert model.arm([0.1, 0.0, 0.1, 0.0]).s_shoulder == pytest.approx(base)


def test_bimanual_is_worst_arm(rng):
    for _ in range(1000):
        left = ArmState(rng.uniform(JOINT_LOWER, JOINT_UPPER), Side.LEFT)
        right = ArmState(rng.uniform(JOINT_LOWER, JOINT_UPPER), Side.RIGHT)
        score = bimanual_score(left, right)
        assert score.s_overall == max(score.s_left, score.s_right)
        assert score.s_overall >= 1.0
        if score.s_left > score.s_right:
            assert score.worst_side is Side.LEFT


def test_arm_gradient_matches_finite_differences(rng):
    model = ErgonomicModel()
    q = np.array([0.7, 1.0, -1.0, -0.8])  # inside ramps and segments, away from kinks
    grad = model.arm_gradient(q)
    fd = np.zeros(4)
    for j in range(4):
        step = np.zeros(4)
        step[j] = 1e-7
        fd[j] = (model.arm(q + step).s_arm - model.arm(q - step).s_arm) / 2e-7
    np.testing.assert_allclose(grad, fd, atol=1e-6)


def test_custom_anchors():
    model = ErgonomicModel(shoulder_anchors=((0.0, 0.0), (1.0, 10.0)))
    assert model.shoulder_flexion(0.5) == pytest.approx(5.0)
    # extended linearly past the last anchor
    assert model.shoulder_flexion(2.0) == pytest.approx(20.0)


def test_piecewise_linear_validation():
    with pytest.raises(ValueError):
        PiecewiseLinear(np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        PiecewiseLinear(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
