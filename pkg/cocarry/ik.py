"""
Inverse kinematics from observed shoulder/elbow/wrist markers

The elbow and wrist position errors are minimized with a bounded
trust-region least-squares solve (scipy) inside the joint box. The solver is
started from the warm-start seed and from closed-form candidates recovered
from the segment directions, and the best refined candidate wins.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .exceptions import InfeasibleFrame, NonConvergence
from .skeleton import (
    JOINT_LOWER,
    JOINT_UPPER,
    ArmPoints,
    ArmState,
    BodyGeometry,
    Side,
    elbow_jacobian,
    forward_kinematics,
    mirror_matrix,
    position_jacobian,
)
from .utils import wrap_angle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IkSettings:
    """Solver knobs; defaults match the scenario file defaults"""

    max_iterations: int = 200
    gtol: float = 1e-8
    xtol: float = 1e-10
    residual_threshold: float = 1e-4
    length_tolerance: float = 0.2
    tie_tolerance: float = 1e-9


@dataclass(frozen=True)
class SkeletonFrame:
    """One motion-capture sample: both arms' points in the torso frame"""

    timestamp: float
    left: ArmPoints
    right: ArmPoints
    flags: tuple = ()

    def arm(self, side: Side) -> ArmPoints:
        return self.left if Side(side) is Side.LEFT else self.right


@dataclass(frozen=True)
class IkResult:
    state: ArmState
    residual: float
    elbow_error: float
    wrist_error: float
    iterations: int
    candidate: str


@dataclass
class FrameSolution:
    timestamp: float
    left: IkResult
    right: IkResult
    flags: List[str] = field(default_factory=list)

    def q(self) -> np.ndarray:
        return np.concatenate([self.left.state.q, self.right.state.q])


def check_frame(frame: SkeletonFrame, geom: BodyGeometry, tolerance: float = 0.2) -> List[str]:
    """
    Segment-length sanity flags for a frame

    Returns:
        One flag per arm segment whose observed length deviates from the
        calibrated one by more than ``tolerance`` (relative)
    """
    flags = []
    for side in Side:
        points = frame.arm(side)
        for segment, observed, expected in (
            ("upper_arm", points.upper_arm_length, geom.d_ua),
            ("forearm", points.forearm_length, geom.d_fa),
        ):
            if abs(observed - expected) > tolerance * expected:
                flags.append(f"{side.value}_{segment}_length")
    return flags


def _closed_form_candidates(points: ArmPoints, side: Side) -> List[np.ndarray]:
    """Joint angles reproducing the observed segment directions (up to two branches each)"""
    m = mirror_matrix(side)
    upper = m @ (points.p_e - points.p_s)
    fore = m @ (points.p_w - points.p_e)
    if np.linalg.norm(upper) < 1e-12 or np.linalg.norm(fore) < 1e-12:
        return []
    u = upper / np.linalg.norm(upper)
    f = fore / np.linalg.norm(fore)

    # elbow direction is [-s1 c2, s2, -c1 c2]
    base = np.arcsin(np.clip(u[1], -1.0, 1.0))
    shoulder = [
        (base, np.arctan2(-u[0], -u[2])),
        (np.pi - base, np.arctan2(u[0], u[2])),
    ]

    candidates = []
    for q2, q1 in shoulder:
        c1, s1, c2, s2 = np.cos(q1), np.sin(q1), np.cos(q2), np.sin(q2)
        r12 = np.array([[c1, s1 * s2, s1 * c2], [0.0, c2, -s2], [-s1, c1 * s2, c1 * c2]])
        # forearm direction in the R1 R2 frame is [-s3 c4, c3 c4, s4]
        g = r12.T @ f
        base4 = np.arcsin(np.clip(g[2], -1.0, 1.0))
        for q4, q3 in ((base4, np.arctan2(-g[0], g[1])), (np.pi - base4, np.arctan2(g[0], -g[1]))):
            candidates.append(wrap_angle(np.array([q1, q2, q3, q4])))
    return candidates


def solve_ik(
    frame: SkeletonFrame,
    geom: BodyGeometry,
    q_seed: ArmState,
    settings: Optional[IkSettings] = None,
) -> IkResult:
    """
    Recover the joint angles of one arm from a skeleton frame

    Args:
        frame: Observed frame (the arm is selected by ``q_seed.side``)
        geom: Calibrated body geometry
        q_seed: Warm-start posture, within the joint box
        settings: Solver settings

    Returns:
        IkResult with the in-box solution and its position residual (m)

    Raises:
        InfeasibleFrame: Observed segment lengths fail the sanity check
        NonConvergence: Iteration cap hit with the residual above threshold
        ValueError: Seed outside the joint box
    """
    settings = settings or IkSettings()
    side = q_seed.side
    if not q_seed.within_limits():
        raise ValueError(f"IK seed outside joint limits: {q_seed.q}")

    flags = [f for f in check_frame(frame, geom, settings.length_tolerance) if f.startswith(side.value)]
    if flags:
        raise InfeasibleFrame(
            f"frame t={frame.timestamp:g} fails segment-length check: {', '.join(flags)}",
            details={"timestamp": frame.timestamp, "flags": flags},
        )

    target = frame.arm(side)

    def residuals(q: np.ndarray) -> np.ndarray:
        pts = forward_kinematics(ArmState(q, side), geom)
        return np.concatenate([pts.p_e - target.p_e, pts.p_w - target.p_w])

    def jacobian(q: np.ndarray) -> np.ndarray:
        state = ArmState(q, side)
        return np.vstack([elbow_jacobian(state, geom), position_jacobian(state, geom)])

    starts = [("seed", np.clip(q_seed.q, JOINT_LOWER, JOINT_UPPER))]
    for i, candidate in enumerate(_closed_form_candidates(target, side)):
        starts.append((f"closed_form_{i}", np.clip(candidate, JOINT_LOWER, JOINT_UPPER)))

    best = None
    for name, x0 in starts:
        result = least_squares(
            residuals,
            x0,
            jac=jacobian,
            bounds=(JOINT_LOWER, JOINT_UPPER),
            method="trf",
            max_nfev=settings.max_iterations,
            gtol=settings.gtol,
            xtol=settings.xtol,
            ftol=1e-15,
        )
        q = np.clip(result.x, JOINT_LOWER, JOINT_UPPER)
        residual = float(np.linalg.norm(residuals(q)))
        distance = float(np.linalg.norm(q - q_seed.q))
        logger.debug(f"IK {side.value} start={name} residual={residual:.3e} nfev={result.nfev} status={result.status}")

        if best is None:
            better = True
        elif residual < best[1] - settings.tie_tolerance:
            better = True
        elif abs(residual - best[1]) <= settings.tie_tolerance:
            better = distance < best[2]
        else:
            better = False
        if better:
            best = (q, residual, distance, result, name)

    q, residual, _, result, name = best
    if result.status == 0 and residual > settings.residual_threshold:
        raise NonConvergence(
            f"IK for {side.value} arm at t={frame.timestamp:g} hit the iteration cap (residual {residual:.3e} m)",
            details={"timestamp": frame.timestamp, "side": side.value, "residual": residual},
        )

    err = residuals(q)
    return IkResult(
        state=ArmState(q, side),
        residual=residual,
        elbow_error=float(np.linalg.norm(err[:3])),
        wrist_error=float(np.linalg.norm(err[3:])),
        iterations=int(result.nfev),
        candidate=name,
    )


def solve_sequence(
    frames: Sequence[SkeletonFrame],
    geom: BodyGeometry,
    settings: Optional[IkSettings] = None,
    skip_flagged: bool = True,
) -> List[Optional[FrameSolution]]:
    """
    Solve both arms for a time-ordered frame sequence with warm starts

    Each arm is seeded with its previous solution (zero posture for the first
    frame). Frames carrying sanity flags are skipped (``None``) when
    ``skip_flagged`` is set; otherwise their errors propagate.
    """
    settings = settings or IkSettings()
    seeds: Dict[Side, ArmState] = {side: ArmState.zero(side) for side in Side}
    solutions: List[Optional[FrameSolution]] = []

    for frame in frames:
        if frame.flags and skip_flagged:
            logger.warning(f"Skipping flagged frame t={frame.timestamp:g}: {', '.join(frame.flags)}")
            solutions.append(None)
            continue
        left = solve_ik(frame, geom, seeds[Side.LEFT], settings)
        right = solve_ik(frame, geom, seeds[Side.RIGHT], settings)
        seeds = {Side.LEFT: left.state, Side.RIGHT: right.state}
        solutions.append(FrameSolution(frame.timestamp, left, right, list(frame.flags)))

    solved = sum(s is not None for s in solutions)
    logger.info(f"IK solved {solved}/{len(solutions)} frames")
    return solutions
