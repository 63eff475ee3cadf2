"""
Bimanual postural optimization

Minimizes

    alpha * s(q)^2 + beta * m(q)^2 + gamma * |q - q_init|^2

over both arms' joint angles, where s is the bimanual ergonomic score and
m(q) = sqrt((m_l - m_0)^2 + (m_r - m_0)^2) the force-capacity deviation
along the load direction. Subject to the joint box and to keeping the
wrist-to-wrist distance within epsilon of its initial value. The shoulders
stay where the frame put them.

The bimanual max is replaced by a log-sum-exp during the search and restored
for reporting and candidate selection. The distance constraint is handled by
an augmented Lagrangian around a bounded L-BFGS-B inner solve, run from
several fixed-seed starts.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp, softmax

from .ergonomics import DEFAULT_MODEL, ErgonomicModel, ErgonomicScore
from .exceptions import DegenerateJacobian, InfeasibleStart
from .manipulability import CapacityMode, arm_capacity
from .skeleton import (
    JOINT_LOWER,
    JOINT_UPPER,
    ArmState,
    BodyGeometry,
    Side,
    forward_kinematics,
    joint_bounds,
    position_jacobian,
    within_limits,
)
from .utils import Z_AXIS, as_vector

logger = logging.getLogger(__name__)


def reference_capacity(
    geom: BodyGeometry,
    load_dir: np.ndarray = Z_AXIS,
    n_samples: int = 2048,
    seed: int = 0,
    mode: CapacityMode = CapacityMode.RADIUS,
) -> float:
    """
    Median force capacity along ``load_dir`` over uniform samples of the joint box

    Args:
        geom: Body geometry
        load_dir: Unit load direction (torso frame)
        n_samples: Samples per arm
        seed: Sampling seed
        mode: Capacity measure

    Returns:
        Median capacity over both arms' samples
    """
    rng = np.random.default_rng(seed)
    values = []
    for side in Side:
        for q in rng.uniform(JOINT_LOWER, JOINT_UPPER, size=(n_samples, 4)):
            try:
                values.append(arm_capacity(ArmState(q, side), geom, load_dir, mode)[0])
            except DegenerateJacobian:
                continue
    m_0 = float(np.median(values))
    logger.info(f"Reference capacity m_0={m_0:.4f} from {len(values)} samples")
    return m_0


@dataclass
class PostureProblem:
    """Inputs of the postural optimization"""

    q_init: np.ndarray
    geom: BodyGeometry
    load_dir: np.ndarray = field(default_factory=lambda: Z_AXIS.copy())
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.2
    m_0: Optional[float] = None
    epsilon: float = 0.02
    kappa: float = 50.0
    n_starts: int = 8
    perturbation: float = 0.15
    seed: int = 0
    capacity_mode: CapacityMode = CapacityMode.RADIUS
    ergonomics: ErgonomicModel = DEFAULT_MODEL
    reference_samples: int = 2048
    max_outer_iterations: int = 30
    max_inner_iterations: int = 500
    workers: int = 1

    def __post_init__(self):
        self.q_init = as_vector(self.q_init, 8, "q_init")
        self.load_dir = as_vector(self.load_dir, 3, "load_dir")
        if abs(np.linalg.norm(self.load_dir) - 1.0) > 1e-9:
            raise ValueError("load_dir must be a unit vector")
        if min(self.alpha, self.beta, self.gamma) < 0 or self.alpha + self.beta + self.gamma <= 0:
            raise ValueError("weights must be non-negative with a positive sum")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        self.capacity_mode = CapacityMode(self.capacity_mode)
        if self.m_0 is None:
            self.m_0 = reference_capacity(
                self.geom, self.load_dir, self.reference_samples, self.seed, self.capacity_mode
            )

    @property
    def weight_sum(self) -> float:
        return self.alpha + self.beta + self.gamma


@dataclass(frozen=True)
class CostEvaluation:
    """Cost value, gradient and the three unweighted components"""

    total: float
    gradient: np.ndarray
    ergonomic: float  # s(q), smoothed or exact
    manipulability: float  # m(q)
    deviation: float  # sum of squared joint offsets
    capacities: Tuple[float, float]


@dataclass
class PostureSolution:
    q_opt: np.ndarray
    q_init: np.ndarray
    cost_init: CostEvaluation
    cost_opt: CostEvaluation
    scores_init: ErgonomicScore
    scores_opt: ErgonomicScore
    wrists_init: Tuple[np.ndarray, np.ndarray]
    wrists_opt: Tuple[np.ndarray, np.ndarray]
    constraint_residual: float
    no_improvement: bool
    start_index: int
    start_costs: List[float]
    m_0: float

    @property
    def states_opt(self) -> Tuple[ArmState, ArmState]:
        return ArmState(self.q_opt[:4], Side.LEFT), ArmState(self.q_opt[4:], Side.RIGHT)


def _split(q: np.ndarray) -> Tuple[ArmState, ArmState]:
    return ArmState(q[:4], Side.LEFT), ArmState(q[4:], Side.RIGHT)


def wrist_positions(q: np.ndarray, geom: BodyGeometry) -> Tuple[np.ndarray, np.ndarray]:
    left, right = _split(q)
    return forward_kinematics(left, geom).p_w, forward_kinematics(right, geom).p_w


def wrist_distance(q: np.ndarray, geom: BodyGeometry) -> Tuple[float, np.ndarray]:
    """Distance between the wrists and its gradient w.r.t. the 8 joint angles"""
    left, right = _split(q)
    delta = forward_kinematics(left, geom).p_w - forward_kinematics(right, geom).p_w
    dist = float(np.linalg.norm(delta))
    unit = delta / dist if dist > 0 else np.zeros(3)
    grad = np.concatenate([position_jacobian(left, geom).T @ unit, -(position_jacobian(right, geom).T @ unit)])
    return dist, grad


def manip_deviation(q: np.ndarray, prob: PostureProblem) -> float:
    """sqrt((m_l - m_0)^2 + (m_r - m_0)^2) with capacities along the load direction"""
    left, right = _split(np.asarray(q, dtype=float))
    m_l = arm_capacity(left, prob.geom, prob.load_dir, prob.capacity_mode)[0]
    m_r = arm_capacity(right, prob.geom, prob.load_dir, prob.capacity_mode)[0]
    return float(np.hypot(m_l - prob.m_0, m_r - prob.m_0))


def posture_cost(q: np.ndarray, prob: PostureProblem, smooth: bool = True) -> CostEvaluation:
    """
    Cost and gradient of a bimanual posture

    Args:
        q: 8 joint angles (left arm first)
        prob: Problem definition
        smooth: Use the log-sum-exp max (optimization) instead of the exact
            max (reporting); the exact variant returns a subgradient

    Returns:
        CostEvaluation
    """
    q = np.asarray(q, dtype=float)
    left, right = _split(q)
    model = prob.ergonomics

    scores = np.array([model.arm(left.q).s_arm, model.arm(right.q).s_arm])
    grads = (model.arm_gradient(left.q), model.arm_gradient(right.q))
    if smooth:
        s = float(logsumexp(prob.kappa * scores) / prob.kappa)
        weights = softmax(prob.kappa * scores)
    else:
        s = float(scores.max())
        weights = np.array([1.0, 0.0]) if scores[0] >= scores[1] else np.array([0.0, 1.0])
    ds = np.concatenate([weights[0] * grads[0], weights[1] * grads[1]])

    m_l, g_l = arm_capacity(left, prob.geom, prob.load_dir, prob.capacity_mode)
    m_r, g_r = arm_capacity(right, prob.geom, prob.load_dir, prob.capacity_mode)
    m_sq = (m_l - prob.m_0) ** 2 + (m_r - prob.m_0) ** 2
    dm_sq = np.concatenate([2 * (m_l - prob.m_0) * g_l, 2 * (m_r - prob.m_0) * g_r])

    offset = q - prob.q_init
    deviation = float(offset @ offset)

    total = prob.alpha * s ** 2 + prob.beta * m_sq + prob.gamma * deviation
    gradient = prob.alpha * 2 * s * ds + prob.beta * dm_sq + prob.gamma * 2 * offset
    return CostEvaluation(float(total), gradient, s, float(np.sqrt(m_sq)), deviation, (m_l, m_r))


class _MultiStartSolver:
    """Augmented-Lagrangian solve from one start; shared by all starts of a problem"""

    def __init__(self, prob: PostureProblem):
        self.prob = prob
        self.lower, self.upper = joint_bounds(2)
        self.bounds = list(zip(self.lower, self.upper))
        self.d_init = wrist_distance(prob.q_init, prob.geom)[0]
        self.margin = 0.999 * prob.epsilon

    def residual(self, q: np.ndarray) -> float:
        return abs(wrist_distance(q, self.prob.geom)[0] - self.d_init)

    def feasible(self, q: np.ndarray) -> bool:
        return within_limits(q) and self.residual(q) <= self.prob.epsilon

    def solve(self, start: np.ndarray) -> np.ndarray:
        prob = self.prob
        scale = prob.weight_sum
        lam = np.zeros(2)
        mu = 100.0
        x = start.copy()
        previous = np.inf

        for outer in range(prob.max_outer_iterations):

            def lagrangian(z: np.ndarray) -> Tuple[float, np.ndarray]:
                ev = posture_cost(z, prob, smooth=True)
                dist, dgrad = wrist_distance(z, prob.geom)
                c = dist - self.d_init
                cons = np.array([c - self.margin, -c - self.margin])
                shifted = np.maximum(0.0, lam + mu * cons)
                value = ev.total / scale + (shifted @ shifted - lam @ lam) / (2 * mu)
                grad = ev.gradient / scale + (shifted[0] - shifted[1]) * dgrad
                return value, grad

            result = minimize(
                lagrangian,
                x,
                jac=True,
                method="L-BFGS-B",
                bounds=self.bounds,
                options={"maxiter": prob.max_inner_iterations, "ftol": 1e-14, "gtol": 1e-10},
            )
            x = np.clip(result.x, self.lower, self.upper)

            c = wrist_distance(x, prob.geom)[0] - self.d_init
            cons = np.array([c - self.margin, -c - self.margin])
            violation = float(max(cons.max(), 0.0))
            lam = np.maximum(0.0, lam + mu * cons)
            logger.debug(f"AL outer={outer} violation={violation:.2e} mu={mu:.1e} lam={lam} inner_nit={result.nit}")

            if violation <= 1e-10 and float(np.abs(lam * cons).max()) <= 1e-10:
                break
            if violation > 0.25 * previous:
                mu = min(mu * 10.0, 1e10)
            previous = violation

        return self.repair(x)

    def repair(self, candidate: np.ndarray) -> np.ndarray:
        """Pull an infeasible candidate back toward q_init until the distance constraint holds"""
        if self.feasible(candidate):
            return candidate
        q_init = self.prob.q_init
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self.feasible(q_init + mid * (candidate - q_init)):
                lo = mid
            else:
                hi = mid
        logger.debug(f"Repaired candidate with step fraction {lo:.6f}")
        return q_init + lo * (candidate - q_init)


def multistart_points(prob: PostureProblem) -> np.ndarray:
    """q_init followed by fixed-seed Gaussian perturbations clipped to the joint box"""
    lower, upper = joint_bounds(2)
    rng = np.random.default_rng(prob.seed)
    noise = rng.normal(0.0, prob.perturbation, size=(prob.n_starts - 1, 8))
    perturbed = np.clip(prob.q_init + noise, lower, upper)
    return np.vstack([prob.q_init[None, :], perturbed])


def optimize_posture(prob: PostureProblem) -> PostureSolution:
    """
    Optimize the bimanual posture

    Args:
        prob: Problem definition

    Returns:
        PostureSolution. ``no_improvement`` is set (and q_opt = q_init) when
        no candidate beats the initial cost.

    Raises:
        InfeasibleStart: q_init outside the joint box
    """
    if not within_limits(prob.q_init):
        raise InfeasibleStart(
            "initial posture violates the joint limits",
            details={"q_init": prob.q_init.tolist()},
        )

    solver = _MultiStartSolver(prob)
    starts = multistart_points(prob)

    if prob.workers > 1:
        with ThreadPoolExecutor(max_workers=prob.workers) as pool:
            candidates = list(pool.map(solver.solve, starts))
    else:
        candidates = [solver.solve(start) for start in starts]

    cost_init = posture_cost(prob.q_init, prob, smooth=False)
    start_costs = [posture_cost(c, prob, smooth=False).total for c in candidates]

    best_index = int(np.argmin(start_costs))
    tolerance = 1e-12 * max(1.0, abs(cost_init.total))
    no_improvement = start_costs[best_index] >= cost_init.total - tolerance
    if no_improvement:
        logger.warning(f"No start improved on the initial cost {cost_init.total:.6g}; keeping q_init")
        q_opt = prob.q_init.copy()
        best_index = -1
    else:
        q_opt = candidates[best_index]

    cost_opt = posture_cost(q_opt, prob, smooth=False)
    model = prob.ergonomics
    solution = PostureSolution(
        q_opt=q_opt,
        q_init=prob.q_init.copy(),
        cost_init=cost_init,
        cost_opt=cost_opt,
        scores_init=model.bimanual(*_split(prob.q_init)),
        scores_opt=model.bimanual(*_split(q_opt)),
        wrists_init=wrist_positions(prob.q_init, prob.geom),
        wrists_opt=wrist_positions(q_opt, prob.geom),
        constraint_residual=solver.residual(q_opt),
        no_improvement=bool(no_improvement),
        start_index=best_index,
        start_costs=start_costs,
        m_0=float(prob.m_0),
    )
    logger.info(
        f"Posture optimized: cost {cost_init.total:.4f} -> {cost_opt.total:.4f}, "
        f"score {solution.scores_init.s_overall:.3f} -> {solution.scores_opt.s_overall:.3f}, "
        f"start={best_index}"
    )
    return solution
