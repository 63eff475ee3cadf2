"""
Model-predictive impedance controller
"""

import numpy as np
import pytest
from scipy.optimize import lsq_linear

from cocarry.exceptions import DimensionMismatch, QpInfeasible, QpMaxIterations
from cocarry.mpic import (
    RIDGE,
    InteractionModel,
    MpcController,
    MpcGains,
    MpcStep,
    QpStructure,
    QuadraticProgram,
    build_qp,
    control_step,
    impedance_law,
    kkt_residual,
    prediction_matrices,
    reference_window,
    solve_qp,
)


def _small_problem(u_max=20.0):
    model = InteractionModel.double_integrator(mass=5.0, dt=0.01, arms=2, dof=1)
    gains = MpcGains.impedance(arms=2, dof=1, horizon=3, u_max=u_max, position_limit=None, velocity_limit=None)
    step = MpcStep(
        x=[0.1, 0.0, -0.05, 0.2],
        x_ref=np.zeros((4, 4)),
        f_ext=[3.0, -2.0],
        f_ref=[1.0, 1.0],
    )
    return model, gains, step


def _explicit_residual(z, model, gains, step):
    """Weighted residual vector of the controller cost, states simulated step by step"""
    N, m = gains.horizon, model.m
    blocks = z.reshape(N, 4, m)
    x = step.x.copy()
    parts = []
    for k in range(N):
        u, w, v, s = blocks[k]
        err = x - step.x_ref[k]
        parts.append(np.sqrt(np.diag(gains.Q_I)) * (w + gains.K_I @ err))
        parts.append(np.sqrt(np.diag(gains.Q_C)) * (v + gains.K_C @ gains.C @ err))
        force = gains.force_sign * step.f_ext - gains.K_F @ (step.f_ext - step.f_ref)
        parts.append(np.sqrt(np.diag(gains.Q_F)) * (s + force))
        parts.append(np.sqrt(np.diag(gains.Q_u)) * (u - w - v - s))
        x = model.step(x, u + step.f_ext)
    return np.concatenate(parts)


def _ridge_term(structure, z):
    H = 2.0 * structure.A.T @ structure.W @ structure.A
    return 0.5 * RIDGE * float(np.mean(np.diag(H))) * float(z @ z)


def test_qp_objective_matches_dense_simulation(rng):
    model, gains, step = _small_problem()
    structure = QpStructure(model, gains)
    qp = structure.qp(step)
    for _ in range(10):
        z = rng.normal(0.0, 5.0, size=qp.size)
        r = _explicit_residual(z, model, gains, step)
        assert qp.objective(z) - _ridge_term(structure, z) == pytest.approx(float(r @ r), rel=1e-9, abs=1e-9)


def test_qp_solution_matches_bounded_least_squares():
    model, gains, step = _small_problem(u_max=20.0)
    structure = QpStructure(model, gains)
    solution = solve_qp(structure.qp(step))

    # the weighted residual is affine in z
    nz = structure.layout.size
    r0 = _explicit_residual(np.zeros(nz), model, gains, step)
    columns = [_explicit_residual(np.eye(nz)[i], model, gains, step) - r0 for i in range(nz)]
    lower, upper = np.full(nz, -np.inf), np.full(nz, np.inf)
    for k in range(gains.horizon):
        index = structure.layout.index(k, "u")
        lower[index], upper[index] = -20.0, 20.0
    oracle = lsq_linear(np.column_stack(columns), -r0, bounds=(lower, upper), method="bvls", tol=1e-14)

    best = float(oracle.fun @ oracle.fun)
    r = _explicit_residual(solution.z, model, gains, step)
    assert float(r @ r) == pytest.approx(best, rel=1e-6, abs=1e-6)
    # the impedance target exceeds the bound, so the input saturates
    assert np.abs(solution.u[0]).max() == pytest.approx(20.0)


def test_kkt_residual_on_random_problems(rng):
    model = InteractionModel.double_integrator(mass=5.0, dt=0.01)
    gains = MpcGains.impedance(horizon=5)
    structure = QpStructure(model, gains)
    for _ in range(50):
        x = np.concatenate([rng.uniform(-0.5, 0.5, 3), rng.uniform(-0.3, 0.3, 3), rng.uniform(-0.5, 0.5, 3), rng.uniform(-0.3, 0.3, 3)])
        step = MpcStep(x, x + rng.normal(0.0, 0.1, size=(6, 12)), rng.normal(0.0, 20.0, 6), rng.normal(0.0, 10.0, 6))
        qp = structure.qp(step)
        solution = solve_qp(qp, factor=structure.factor)
        assert solution.kkt_residual < 1e-8
        assert kkt_residual(qp, solution.z, solution.multipliers) == solution.kkt_residual
        assert qp.violation(solution.z) < 1e-9


def test_unconstrained_first_input_is_impedance_law(rng):
    model = InteractionModel.double_integrator()
    gains = MpcGains.impedance(horizon=8, u_max=None, position_limit=None, velocity_limit=None)
    for _ in range(5):
        x = rng.normal(0.0, 0.05, 12)
        step = MpcStep(x, np.zeros((9, 12)), rng.normal(0.0, 5.0, 6), rng.normal(0.0, 5.0, 6))
        result = control_step(step, model, gains)
        np.testing.assert_allclose(result.u, impedance_law(step, gains), rtol=1e-6, atol=1e-4)
        np.testing.assert_allclose(result.u, result.w + result.v + result.s, atol=1e-4)
        assert not result.fallback


def test_impedance_only_controller(rng):
    model = InteractionModel.double_integrator()
    zeros = np.zeros((6, 6))
    gains = MpcGains.impedance(horizon=5, u_max=None, position_limit=None, velocity_limit=None).replace(Q_C=zeros, Q_F=zeros)
    assert gains.enabled() == ("w",)

    x = rng.normal(0.0, 0.05, 12)
    step = MpcStep(x, np.zeros((6, 12)), rng.normal(0.0, 5.0, 6), np.zeros(6))
    result = control_step(step, model, gains)
    np.testing.assert_allclose(result.u, -gains.K_I @ x, rtol=1e-6, atol=1e-4)
    assert np.all(result.v == 0.0) and np.all(result.s == 0.0)


def test_disabled_term_is_eliminated():
    model = InteractionModel.double_integrator()
    gains = MpcGains.impedance(horizon=4).replace(Q_C=np.zeros((6, 6)))
    structure = QpStructure(model, gains)
    assert structure.layout.blocks == ("u", "w", "s")
    assert structure.layout.size == 4 * 6 * 3


def test_large_error_saturates():
    model = InteractionModel.double_integrator()
    gains = MpcGains.impedance(horizon=5, u_max=50.0)
    x = np.zeros(12)
    x[0] = 1.0
    result = MpcController(model, gains).step(MpcStep(x, np.zeros((6, 12)), np.zeros(6), np.zeros(6)))
    assert result.saturated
    assert not result.fallback
    assert np.abs(result.u).max() <= 50.0 + 1e-9
    assert result.active


def test_state_outside_limits_falls_back():
    model = InteractionModel.double_integrator()
    gains = MpcGains.impedance(horizon=5, u_max=50.0, position_limit=0.5)
    x = np.zeros(12)
    x[0] = 0.8
    step = MpcStep(x, np.zeros((6, 12)), np.zeros(6), np.zeros(6))

    with pytest.raises(QpInfeasible):
        build_qp(step, model, gains)

    controller = MpcController(model, gains)
    result = controller.step(step)
    assert result.fallback
    assert controller.fallbacks == 1
    np.testing.assert_allclose(result.u, np.clip(-gains.K_I @ x, -50.0, 50.0))


def test_inconsistent_constraints():
    qp = QuadraticProgram(
        H=np.eye(1), g=np.zeros(1), A_ineq=np.array([[1.0], [-1.0]]), b_ineq=np.array([-1.0, -1.0])
    )
    with pytest.raises(QpInfeasible):
        solve_qp(qp)


def test_iteration_budget():
    qp = QuadraticProgram(H=np.eye(2), g=np.array([-10.0, -10.0]), A_ineq=np.eye(2), b_ineq=np.ones(2))
    solution = solve_qp(qp)
    np.testing.assert_allclose(solution.z, [1.0, 1.0])
    assert len(solution.active) == 2
    with pytest.raises(QpMaxIterations):
        solve_qp(qp, max_iterations=1)


def test_dimension_mismatch():
    model = InteractionModel.double_integrator()
    gains = MpcGains.impedance(horizon=3)
    with pytest.raises(DimensionMismatch):
        build_qp(MpcStep(np.zeros(10), np.zeros((4, 12)), np.zeros(6), np.zeros(6)), model, gains)
    with pytest.raises(DimensionMismatch):
        build_qp(MpcStep(np.zeros(12), np.zeros((3, 12)), np.zeros(6), np.zeros(6)), model, gains)
    with pytest.raises(DimensionMismatch):
        QpStructure(InteractionModel.double_integrator(arms=1), gains)


def test_double_integrator_discretization():
    model = InteractionModel.double_integrator(mass=2.0, dt=0.1, arms=1, dof=1)
    np.testing.assert_allclose(model.A, [[1.0, 0.1], [0.0, 1.0]], atol=1e-14)
    np.testing.assert_allclose(model.B, [[0.1 ** 2 / 4.0], [0.1 / 2.0]], atol=1e-14)

    damped = InteractionModel.double_integrator(mass=2.0, damping=4.0, dt=0.1, arms=1, dof=1)
    assert damped.A[1, 1] == pytest.approx(np.exp(-0.2))


def test_prediction_matrices_match_rollout(rng):
    model = InteractionModel.double_integrator(dt=0.02)
    phi, gamma = prediction_matrices(model, 6)
    x0 = rng.normal(size=12)
    inputs = rng.normal(size=(6, 6))
    x = x0
    for k in range(6):
        x = model.step(x, inputs[k])
        np.testing.assert_allclose(phi[k + 1] @ x0 + gamma[k + 1] @ inputs.reshape(-1), x, atol=1e-12)


def test_reference_window_pads_last_sample():
    references = np.arange(5.0)[:, None] * np.ones((1, 2))
    window = reference_window(references, 3, 4)
    assert window.shape == (5, 2)
    np.testing.assert_array_equal(window[:, 0], [3, 4, 4, 4, 4])


def test_gain_validation():
    gains = MpcGains.impedance()
    with pytest.raises(ValueError):
        gains.replace(Q_u=np.zeros((6, 6)))
    with pytest.raises(ValueError):
        gains.replace(horizon=0)
    with pytest.raises(ValueError):
        gains.replace(force_sign=0.5)
    with pytest.raises(ValueError):
        gains.replace(Q_I=-np.eye(6))


def test_unforced_scalar_problem_has_zero_optimum():
    model = InteractionModel(np.eye(1), np.array([[0.01]]), dt=0.01)
    zero = np.zeros((1, 1))
    gains = MpcGains(K_I=zero, K_C=zero, C=zero, K_F=zero, Q_I=np.eye(1), Q_C=np.eye(1), Q_F=np.eye(1), Q_u=np.eye(1), horizon=1)
    result = control_step(MpcStep([0.7], np.zeros((2, 1)), [0.0], [0.0]), model, gains)
    for part in (result.u, result.w, result.v, result.s):
        np.testing.assert_allclose(part, 0.0, atol=1e-12)
    assert result.objective == pytest.approx(0.0, abs=1e-12)


def test_receding_horizon_reproduces_open_loop_inputs(rng):
    model = InteractionModel.double_integrator()
    gains = MpcGains.impedance(horizon=30, u_max=None, position_limit=None, velocity_limit=None)
    N = gains.horizon
    times = np.arange(N + 10)[:, None] * model.dt
    references = 1e-3 * np.sin(2.0 * times + np.arange(12)[None, :])
    f_ext, f_ref = rng.normal(0.0, 0.5, 6), np.zeros(6)

    x = rng.normal(0.0, 1e-3, 12)
    structure = QpStructure(model, gains)
    plan = solve_qp(structure.qp(MpcStep(x, reference_window(references, 0, N), f_ext, f_ref)), factor=structure.factor).u

    for k in range(1, 6):
        x = model.step(x, plan[k - 1] + f_ext)
        result = control_step(MpcStep(x, reference_window(references, k, N), f_ext, f_ref), model, gains)
        np.testing.assert_allclose(result.u, plan[k], rtol=1e-6, atol=1e-6)


def test_input_weight_pulls_decomposition_together():
    model = InteractionModel.double_integrator()
    x = np.zeros(12)
    x[0] = 1.0
    step = MpcStep(x, np.zeros((6, 12)), np.zeros(6), np.zeros(6))

    residuals = []
    for scale in (1.0, 10.0, 100.0):
        gains = MpcGains.impedance(horizon=5, u_max=50.0, q_input=0.01 * scale, position_limit=None, velocity_limit=None)
        structure = QpStructure(model, gains)
        solution = solve_qp(structure.qp(step), factor=structure.factor)
        residuals.append(float(np.linalg.norm(solution.u - solution.w - solution.v - solution.s)))

    assert residuals[1] <= residuals[0] + 1e-9
    assert residuals[2] <= residuals[1] + 1e-9
    assert residuals[2] < residuals[0]
