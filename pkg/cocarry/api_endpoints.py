"""
HTTP endpoints: one-shot computations over the toolkit's stages

Toolkit errors propagate to the application's CoCarryError handler (422);
anything unexpected is logged and returned as a 500.
"""

import logging
from pathlib import Path

import numpy as np
from fastapi import APIRouter, HTTPException

from .config import current_settings
from .ergonomics import bimanual_score
from .exceptions import CoCarryError
from .ik import IkSettings, SkeletonFrame, solve_ik
from .manipulability import force_capacity_along, force_ellipsoid, velocity_capacity_along
from .models import (
    ArmSolution,
    EllipsoidRequest,
    EllipsoidResponse,
    ErgonomicsScoreRequest,
    ErgonomicsScoreResponse,
    IkSolveRequest,
    IkSolveResponse,
    PipelineRunRequest,
    PipelineRunResponse,
    PoseGenerateRequest,
    PoseGenerateResponse,
    PostureOptimizeRequest,
    PostureOptimizeResponse,
    TrajectoryPlanRequest,
    TrajectoryPlanResponse,
)
from .pipeline import Pipeline, pose_model, posture_report, score_breakdown, to_geometry, to_pose, trajectory_report
from .pose_gen import GraspConfiguration, generate_targets
from .posture_opt import PostureProblem, optimize_posture
from .scenario import load_scenario
from .skeleton import ArmPoints, ArmState, Side, calibrate_geometry, position_jacobian
from .trajectory import TimingLimits, plan_dual

logger = logging.getLogger(__name__)

# Initialize routers
ergonomics_router = APIRouter(prefix="/ergonomics", tags=["ergonomics"])
manipulability_router = APIRouter(prefix="/manipulability", tags=["manipulability"])
ik_router = APIRouter(prefix="/ik", tags=["ik"])
posture_router = APIRouter(prefix="/posture", tags=["posture"])
poses_router = APIRouter(prefix="/poses", tags=["poses"])
trajectory_router = APIRouter(prefix="/trajectory", tags=["trajectory"])
pipeline_router = APIRouter(prefix="/pipeline", tags=["pipeline"])


def _fail(endpoint: str, exc: Exception) -> HTTPException:
    if isinstance(exc, ValueError):
        return HTTPException(status_code=422, detail=str(exc))
    logger.error(f"Error in {endpoint}: {exc}")
    return HTTPException(status_code=500, detail=str(exc))


# Ergonomics Endpoints
@ergonomics_router.post("/score", response_model=ErgonomicsScoreResponse)
async def score_posture(request: ErgonomicsScoreRequest):
    """Continuous ergonomic score of a bimanual posture"""
    try:
        score = bimanual_score(ArmState(np.array(request.q_left), Side.LEFT), ArmState(np.array(request.q_right), Side.RIGHT))
        return ErgonomicsScoreResponse(scores=score_breakdown(score))
    except CoCarryError:
        raise
    except Exception as e:
        raise _fail("score_posture", e)


# Manipulability Endpoints
@manipulability_router.post("/ellipsoid", response_model=EllipsoidResponse)
async def arm_ellipsoid(request: EllipsoidRequest):
    """Force manipulability ellipsoid of one arm and its capacity along a direction"""
    try:
        direction = np.array(request.direction)
        norm = np.linalg.norm(direction)
        if norm == 0:
            raise ValueError("direction must be nonzero")
        direction = direction / norm

        state = ArmState(np.array(request.q), request.side)
        ellipsoid = force_ellipsoid(position_jacobian(state, to_geometry(request.geometry)))
        return EllipsoidResponse(
            matrix=ellipsoid.M_F.tolist(),
            eigenvalues=ellipsoid.eigenvalues.tolist(),
            eigenvectors=ellipsoid.eigenvectors.tolist(),
            radii=ellipsoid.radii.tolist(),
            volume=ellipsoid.volume,
            capacity=force_capacity_along(ellipsoid, direction, request.mode),
            velocity_support=velocity_capacity_along(ellipsoid, direction),
        )
    except CoCarryError:
        raise
    except Exception as e:
        raise _fail("arm_ellipsoid", e)


# IK Endpoints
@ik_router.post("/solve", response_model=IkSolveResponse)
async def solve_frame(request: IkSolveRequest):
    """Joint angles of both arms from one skeleton frame"""
    try:
        frame = SkeletonFrame(
            0.0,
            ArmPoints(request.shoulder_left, request.elbow_left, request.wrist_left),
            ArmPoints(request.shoulder_right, request.elbow_right, request.wrist_right),
        )
        geom = to_geometry(request.geometry) if request.geometry is not None else calibrate_geometry([frame])
        settings = IkSettings()
        arms = {}
        for side in Side:
            result = solve_ik(frame, geom, ArmState.zero(side), settings)
            arms[side.value] = ArmSolution(
                q=result.state.q.tolist(),
                residual=result.residual,
                elbow_error=result.elbow_error,
                wrist_error=result.wrist_error,
                candidate=result.candidate,
            )
        return IkSolveResponse(**arms)
    except CoCarryError:
        raise
    except Exception as e:
        raise _fail("solve_frame", e)


# Posture Endpoints
@posture_router.post("/optimize", response_model=PostureOptimizeResponse)
def optimize(request: PostureOptimizeRequest):
    """Ergonomic posture optimization from an initial bimanual posture"""
    try:
        direction = np.array(request.load_direction)
        direction = direction / np.linalg.norm(direction)
        prob = PostureProblem(
            q_init=np.array(request.q_init),
            geom=to_geometry(request.geometry),
            load_dir=direction,
            alpha=request.alpha,
            beta=request.beta,
            gamma=request.gamma,
            m_0=request.reference_capacity,
            epsilon=request.epsilon,
            n_starts=request.starts,
            seed=request.seed,
            workers=current_settings.multistart_workers,
        )
        return PostureOptimizeResponse(posture=posture_report(optimize_posture(prob), direction))
    except CoCarryError:
        raise
    except Exception as e:
        raise _fail("optimize", e)


# Pose Generation Endpoints
@poses_router.post("/generate", response_model=PoseGenerateResponse)
async def generate_poses(request: PoseGenerateRequest):
    """Object and robot end-effector targets for an optimized wrist pair"""
    try:
        grasp = GraspConfiguration(
            wrist_left=np.array(request.wrist_left),
            wrist_right=np.array(request.wrist_right),
            wrist_left_opt=np.array(request.wrist_left_opt),
            wrist_right_opt=np.array(request.wrist_right_opt),
            object_pose=to_pose(request.object_pose),
            ee_left=to_pose(request.ee_left),
            ee_right=to_pose(request.ee_right),
        )
        targets = generate_targets(grasp, strict=request.strict)
        return PoseGenerateResponse(
            object_pose=pose_model(targets.object_pose),
            ee_left=pose_model(targets.ee_left),
            ee_right=pose_model(targets.ee_right),
            rotation=targets.rotation.tolist(),
            angle=targets.angle,
            antiparallel=targets.antiparallel,
        )
    except CoCarryError:
        raise
    except Exception as e:
        raise _fail("generate_poses", e)


# Trajectory Endpoints
@trajectory_router.post("/plan", response_model=TrajectoryPlanResponse)
async def plan_trajectory(request: TrajectoryPlanRequest):
    """Synchronized dual-arm minimum-jerk plan"""
    try:
        trajectory = plan_dual(
            to_pose(request.start_left),
            to_pose(request.end_left),
            to_pose(request.start_right),
            to_pose(request.end_right),
            limits=TimingLimits(request.v_max, request.omega_max, request.t_min),
            rate=request.rate,
            duration=request.duration,
        )
        samples = None
        if request.include_samples:
            samples = {
                "t": [[t] for t in trajectory.t.tolist()],
                "left": trajectory.left.positions.tolist(),
                "right": trajectory.right.positions.tolist(),
            }
        return TrajectoryPlanResponse(trajectory=trajectory_report(trajectory, request.rate), samples=samples)
    except CoCarryError:
        raise
    except Exception as e:
        raise _fail("plan_trajectory", e)


# Pipeline Endpoints
@pipeline_router.post("/run", response_model=PipelineRunResponse)
def run_scenario(request: PipelineRunRequest):
    """Full pipeline run of a scenario file on the server"""
    try:
        scenario = load_scenario(Path(request.scenario_path))
        pipeline = Pipeline(scenario, request.output_directory, request.seed)
        report = pipeline.run()
        return PipelineRunResponse(report=report, output_directory=str(pipeline.output_dir))
    except CoCarryError:
        raise
    except Exception as e:
        raise _fail("run_scenario", e)


# Include all routers
all_routers = [
    ergonomics_router,
    manipulability_router,
    ik_router,
    posture_router,
    poses_router,
    trajectory_router,
    pipeline_router,
]
