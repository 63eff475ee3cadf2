"""
Bimanual posture optimization
"""

import itertools

import numpy as np
import pytest

from cocarry.exceptions import InfeasibleStart
from cocarry.posture_opt import (
    PostureProblem,
    manip_deviation,
    multistart_points,
    optimize_posture,
    posture_cost,
    reference_capacity,
    wrist_distance,
)
from cocarry.manipulability import force_capacity_along, force_ellipsoid
from cocarry.skeleton import JOINT_LOWER, JOINT_UPPER, ArmState, Side, joint_bounds, position_jacobian, within_limits
from conftest import BOX_Q, TABLE_Q


@pytest.fixture
def table_problem(geometry):
    return PostureProblem(q_init=TABLE_Q, geom=geometry, reference_samples=256, n_starts=4, seed=3)


def test_table_posture_improves(table_problem):
    solution = optimize_posture(table_problem)

    assert not solution.no_improvement
    assert solution.cost_opt.total < solution.cost_init.total
    assert solution.scores_opt.s_overall < solution.scores_init.s_overall
    assert solution.constraint_residual <= table_problem.epsilon
    assert within_limits(solution.q_opt)
    assert len(solution.start_costs) == 4
    assert solution.start_costs[solution.start_index] == pytest.approx(solution.cost_opt.total)


def test_optimum_beats_sagittal_lattice(table_problem):
    solution = optimize_posture(table_problem)

    # q1 = q3 = 0 on both arms keeps the wrists at their initial lateral offsets
    best = np.inf
    for q2, q4 in itertools.product(
        np.linspace(JOINT_LOWER[1], JOINT_UPPER[1], 25), np.linspace(JOINT_LOWER[3], JOINT_UPPER[3], 25)
    ):
        q = np.array([0.0, q2, 0.0, q4] * 2)
        if abs(wrist_distance(q, table_problem.geom)[0] - wrist_distance(TABLE_Q, table_problem.geom)[0]) > table_problem.epsilon:
            continue
        best = min(best, posture_cost(q, table_problem, smooth=False).total)

    assert np.isfinite(best)
    assert solution.cost_opt.total <= 1.02 * best


def test_deviation_only_keeps_initial_posture(geometry):
    problem = PostureProblem(
        q_init=BOX_Q, geom=geometry, alpha=0.0, beta=0.0, gamma=1.0, m_0=1.0, n_starts=3
    )
    solution = optimize_posture(problem)
    assert solution.no_improvement
    assert solution.start_index == -1
    np.testing.assert_array_equal(solution.q_opt, BOX_Q)
    assert solution.constraint_residual == 0.0


def test_same_seed_same_result(geometry):
    runs = [
        optimize_posture(PostureProblem(q_init=BOX_Q, geom=geometry, m_0=0.5, n_starts=3, seed=9))
        for _ in range(2)
    ]
    np.testing.assert_array_equal(runs[0].q_opt, runs[1].q_opt)
    assert runs[0].start_costs == runs[1].start_costs


def test_parallel_starts_match_sequential(geometry):
    sequential = optimize_posture(PostureProblem(q_init=BOX_Q, geom=geometry, m_0=0.5, n_starts=3, seed=9))
    threaded = optimize_posture(PostureProblem(q_init=BOX_Q, geom=geometry, m_0=0.5, n_starts=3, seed=9, workers=3))
    np.testing.assert_array_equal(sequential.q_opt, threaded.q_opt)


def test_start_outside_joint_box(geometry):
    q = TABLE_Q.copy()
    q[1] = JOINT_UPPER[1] + 0.1
    with pytest.raises(InfeasibleStart):
        optimize_posture(PostureProblem(q_init=q, geom=geometry, m_0=1.0))


def test_problem_validation(geometry):
    with pytest.raises(ValueError):
        PostureProblem(q_init=TABLE_Q, geom=geometry, alpha=0.0, beta=0.0, gamma=0.0, m_0=1.0)
    with pytest.raises(ValueError):
        PostureProblem(q_init=TABLE_Q, geom=geometry, load_dir=[0.0, 0.0, 2.0], m_0=1.0)
    with pytest.raises(ValueError):
        PostureProblem(q_init=TABLE_Q, geom=geometry, epsilon=0.0, m_0=1.0)
    with pytest.raises(ValueError):
        PostureProblem(q_init=TABLE_Q[:4], geom=geometry, m_0=1.0)


def test_multistart_points(geometry):
    problem = PostureProblem(q_init=TABLE_Q, geom=geometry, m_0=1.0, n_starts=6, seed=1)
    points = multistart_points(problem)
    lower, upper = joint_bounds(2)
    assert points.shape == (6, 8)
    np.testing.assert_array_equal(points[0], TABLE_Q)
    assert np.all(points >= lower) and np.all(points <= upper)
    np.testing.assert_array_equal(points, multistart_points(problem))


def test_cost_gradient_matches_finite_differences(table_problem, rng):
    q = TABLE_Q + rng.normal(0.0, 0.05, size=8)
    ev = posture_cost(q, table_problem, smooth=True)
    fd = np.zeros(8)
    for j in range(8):
        step = np.zeros(8)
        step[j] = 1e-6
        fd[j] = (
            posture_cost(q + step, table_problem).total - posture_cost(q - step, table_problem).total
        ) / 2e-6
    np.testing.assert_allclose(ev.gradient, fd, rtol=1e-4, atol=1e-5)


def test_wrist_distance_gradient(geometry, rng):
    q = TABLE_Q + rng.normal(0.0, 0.1, size=8)
    _, grad = wrist_distance(q, geometry)
    fd = np.zeros(8)
    for j in range(8):
        step = np.zeros(8)
        step[j] = 1e-6
        fd[j] = (wrist_distance(q + step, geometry)[0] - wrist_distance(q - step, geometry)[0]) / 2e-6
    np.testing.assert_allclose(grad, fd, atol=1e-8)


def test_reference_capacity_is_seeded(geometry):
    first = reference_capacity(geometry, n_samples=128, seed=4)
    assert first > 0
    assert first == reference_capacity(geometry, n_samples=128, seed=4)


def _capacity(q, side, geometry):
    return force_capacity_along(force_ellipsoid(position_jacobian(ArmState(q, side), geometry)), [0.0, 0.0, 1.0])


def test_manip_deviation(geometry, interior_postures):
    prob = PostureProblem(q_init=TABLE_Q, geom=geometry, m_0=1.0, n_starts=1)
    m_table = _capacity(TABLE_Q[:4], Side.LEFT, geometry)
    # the symmetric posture gives both arms the same capacity
    assert _capacity(TABLE_Q[4:], Side.RIGHT, geometry) == pytest.approx(m_table, rel=1e-12)

    prob.m_0 = m_table
    assert manip_deviation(TABLE_Q, prob) == pytest.approx(0.0, abs=1e-9)
    prob.m_0 = m_table - 1.0
    assert manip_deviation(TABLE_Q, prob) == pytest.approx(np.sqrt(2.0))

    for q_left, q_right in zip(interior_postures(20), interior_postures(20)):
        q = np.concatenate([q_left, q_right])
        m_l, m_r = _capacity(q_left, Side.LEFT, geometry), _capacity(q_right, Side.RIGHT, geometry)
        prob.m_0 = m_r
        assert manip_deviation(q, prob) == pytest.approx(abs(m_l - m_r), rel=1e-9, abs=1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("q_init", [TABLE_Q, BOX_Q], ids=["table", "box"])
def test_optimum_beats_joint_lattice(geometry, q_init):
    problem = PostureProblem(q_init=q_init, geom=geometry, reference_samples=256, n_starts=4, seed=3)
    solution = optimize_posture(problem)
    assert solution.cost_opt.total < solution.cost_init.total
    assert solution.scores_opt.s_overall < solution.scores_init.s_overall

    # three levels per joint around the initial posture, all 8 joints
    d_init = wrist_distance(q_init, geometry)[0]
    best = np.inf
    for offsets in itertools.product((-0.25, 0.0, 0.25), repeat=8):
        q = q_init + np.array(offsets)
        if not within_limits(q) or abs(wrist_distance(q, geometry)[0] - d_init) > problem.epsilon:
            continue
        best = min(best, posture_cost(q, problem, smooth=False).total)

    assert best <= solution.cost_init.total
    assert solution.cost_opt.total <= 1.02 * best


@pytest.mark.parametrize("factor", [2.0, 0.25])
def test_common_weight_scale_keeps_optimum(geometry, factor):
    base = dict(q_init=TABLE_Q, geom=geometry, m_0=1.0, n_starts=3, seed=5)
    reference = optimize_posture(PostureProblem(alpha=1.0, beta=0.5, gamma=0.2, **base))
    scaled = optimize_posture(PostureProblem(alpha=factor, beta=0.5 * factor, gamma=0.2 * factor, **base))

    np.testing.assert_array_equal(scaled.q_opt, reference.q_opt)
    assert scaled.start_index == reference.start_index


def test_tighter_tolerance_never_loosens_wrist_distance(geometry):
    residuals = []
    for epsilon in (0.1, 0.02, 0.005, 1e-4):
        problem = PostureProblem(q_init=TABLE_Q, geom=geometry, m_0=1.0, epsilon=epsilon, n_starts=1)
        solution = optimize_posture(problem)
        assert solution.constraint_residual <= epsilon
        residuals.append(solution.constraint_residual)

    for looser, tighter in zip(residuals, residuals[1:]):
        assert tighter <= looser + 1e-6
