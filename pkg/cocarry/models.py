"""
Pydantic models for stage outputs, run reports and API request/response validation
"""

from datetime import datetime
from typing import Annotated, Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator

from .manipulability import CapacityMode
from .skeleton import Side

Vector3 = Annotated[List[float], Field(min_length=3, max_length=3)]
Quaternion = Annotated[List[float], Field(min_length=4, max_length=4)]
ArmAngles = Annotated[List[float], Field(min_length=4, max_length=4)]
BimanualAngles = Annotated[List[float], Field(min_length=8, max_length=8)]


# Base Response Models
class BaseResponse(BaseModel):
    """Base response model with common fields"""
    success: bool = True
    message: Optional[str] = None
    timestamp: str = Field(default_factory=lambda: str(datetime.now().isoformat()))


class ErrorResponse(BaseModel):
    """Standard error response model"""
    success: bool = False
    error_code: str = Field(..., description="Error code")
    error_message: str = Field(..., description="Human-readable error message")
    details: Optional[Dict[str, Any]] = Field(None, description="Additional error details")
    stage: Optional[str] = Field(None, description="Pipeline stage that failed")
    timestamp: str = Field(default_factory=lambda: str(datetime.now().isoformat()))


# Shared Models
class GeometryModel(BaseModel):
    """Body geometry in the torso frame"""
    upper_arm: float = Field(..., gt=0, description="Shoulder-elbow length (m)")
    forearm: float = Field(..., gt=0, description="Elbow-wrist length (m)")
    shoulder_left: Vector3 = Field(..., description="Left shoulder origin (m)")
    shoulder_right: Vector3 = Field(..., description="Right shoulder origin (m)")


class PoseModel(BaseModel):
    """Position (m) and unit quaternion (w, x, y, z)"""
    position: Vector3
    orientation: Quaternion = Field(default_factory=lambda: [1.0, 0.0, 0.0, 0.0])


class ScoreBreakdown(BaseModel):
    """Ergonomic scores of one posture"""
    left: float = Field(..., description="Left arm score (shoulder + elbow)")
    right: float = Field(..., description="Right arm score (shoulder + elbow)")
    overall: float = Field(..., description="Bimanual worst-case score")
    worst_side: Side
    left_shoulder: float
    left_elbow: float
    right_shoulder: float
    right_elbow: float


class CapacityBreakdown(BaseModel):
    """Per-arm force capacity along one direction"""
    direction: Vector3
    left: float
    right: float


class CostBreakdown(BaseModel):
    """Exact posture cost and its unweighted components"""
    total: float
    ergonomic: float
    manipulability: float
    deviation: float


# Stage Reports
class IkReport(BaseModel):
    """Frame ingestion and inverse kinematics"""
    frames_total: int
    frames_solved: int
    frames_flagged: int
    flags: Dict[str, List[str]] = Field(default_factory=dict, description="Flags by frame timestamp")
    max_residual: float
    mean_residual: float
    selected_time: float = Field(..., description="Timestamp of the frame used as the initial posture")
    q_init: List[float] = Field(..., description="Initial joint angles, left arm then right arm")
    geometry: GeometryModel
    calibrated: bool = Field(..., description="Geometry estimated from the frames")


class PostureReport(BaseModel):
    """Postural optimization"""
    q_init: List[float]
    q_opt: List[float]
    m_0: float = Field(..., description="Reference force capacity")
    cost_before: CostBreakdown
    cost_after: CostBreakdown
    scores_before: ScoreBreakdown
    scores_after: ScoreBreakdown
    capacity_before: CapacityBreakdown
    capacity_after: CapacityBreakdown
    wrists_before: List[Vector3] = Field(..., description="Left/right wrists, torso frame")
    wrists_after: List[Vector3]
    constraint_residual: float
    no_improvement: bool
    start_index: int
    start_costs: List[float]


class PoseGenerationReport(BaseModel):
    """Object and robot end-effector targets"""
    object_before: PoseModel
    object_after: PoseModel
    ee_left_before: PoseModel
    ee_left_after: PoseModel
    ee_right_before: PoseModel
    ee_right_after: PoseModel
    wrists_before: List[Vector3] = Field(..., description="Left/right wrists, robot frame")
    wrists_after: List[Vector3]
    rotation: List[List[float]]
    angle: float
    antiparallel: bool
    movement_capacity_before: Optional[CapacityBreakdown] = Field(None, description="Capacity along the object's displacement")
    movement_capacity_after: Optional[CapacityBreakdown] = None


class TrajectoryReport(BaseModel):
    """Dual-arm minimum-jerk plan"""
    duration: float
    samples: int
    rate: float
    start_left: PoseModel
    end_left: PoseModel
    start_right: PoseModel
    end_right: PoseModel
    peak_speed_left: float
    peak_speed_right: float
    path_length_left: float
    path_length_right: float
    rotation_angle: float


class SimulationReport(BaseModel):
    """Closed-loop tracking results"""
    steps: int
    disturbance_events: int
    terminal_error: Optional[float] = Field(None, description="Max over arms, m; null if diverged")
    max_tracking_error: float
    rms_tracking_error: float
    max_relative_error: float
    rms_relative_error: float
    fallback_steps: int
    saturated_steps: int
    max_state_violation: float
    peak_force: float
    diverged: bool

    @field_validator("terminal_error", mode="before")
    @classmethod
    def nan_to_none(cls, value):
        if value is not None and value != value:
            return None
        return value


class RunReport(BaseModel):
    """Everything one pipeline run produced"""
    scenario: str
    subject: str
    seed: int
    config_hash: str
    version: str
    ik: IkReport
    posture: PostureReport
    poses: PoseGenerationReport
    trajectory: TrajectoryReport
    simulation: SimulationReport
    outputs: List[str] = Field(default_factory=list, description="Files written next to the report")
    created_at: str = Field(default_factory=lambda: str(datetime.now().isoformat()))

    @property
    def score_drop(self) -> float:
        return self.posture.scores_before.overall - self.posture.scores_after.overall


# API Request Models
class ErgonomicsScoreRequest(BaseModel):
    """Request model for bimanual ergonomic scoring"""
    q_left: ArmAngles = Field(..., description="Left arm joint angles (rad)")
    q_right: ArmAngles = Field(..., description="Right arm joint angles (rad)")


class ErgonomicsScoreResponse(BaseResponse):
    scores: ScoreBreakdown


class EllipsoidRequest(BaseModel):
    """Request model for the force manipulability ellipsoid of one arm"""
    q: ArmAngles = Field(..., description="Joint angles (rad)")
    side: Side = Side.RIGHT
    geometry: GeometryModel
    direction: Vector3 = Field(default_factory=lambda: [0.0, 0.0, 1.0], description="Direction for the capacity")
    mode: CapacityMode = CapacityMode.RADIUS


class EllipsoidResponse(BaseResponse):
    matrix: List[List[float]] = Field(..., description="Force ellipsoid matrix (J J^T + sigma I)^-1")
    eigenvalues: List[float]
    eigenvectors: List[List[float]] = Field(..., description="Columns are principal axes")
    radii: List[float]
    volume: float
    capacity: float = Field(..., description="Force capacity along the requested direction")
    velocity_support: float


class IkSolveRequest(BaseModel):
    """Request model for single-frame inverse kinematics"""
    shoulder_left: Vector3
    elbow_left: Vector3
    wrist_left: Vector3
    shoulder_right: Vector3
    elbow_right: Vector3
    wrist_right: Vector3
    geometry: Optional[GeometryModel] = Field(None, description="Defaults to lengths measured from the frame")


class ArmSolution(BaseModel):
    q: List[float]
    residual: float
    elbow_error: float
    wrist_error: float
    candidate: str


class IkSolveResponse(BaseResponse):
    left: ArmSolution
    right: ArmSolution


class PostureOptimizeRequest(BaseModel):
    """Request model for postural optimization"""
    q_init: BimanualAngles = Field(..., description="Left then right arm joint angles (rad)")
    geometry: GeometryModel
    load_direction: Vector3 = Field(default_factory=lambda: [0.0, 0.0, 1.0])
    alpha: float = Field(1.0, ge=0)
    beta: float = Field(0.5, ge=0)
    gamma: float = Field(0.2, ge=0)
    epsilon: float = Field(0.02, gt=0)
    reference_capacity: Optional[float] = Field(None, gt=0)
    starts: int = Field(8, ge=1, le=64)
    seed: int = Field(0, ge=0)


class PostureOptimizeResponse(BaseResponse):
    posture: PostureReport


class PoseGenerateRequest(BaseModel):
    """Request model for robot target generation (robot frame)"""
    wrist_left: Vector3
    wrist_right: Vector3
    wrist_left_opt: Vector3
    wrist_right_opt: Vector3
    object_pose: PoseModel
    ee_left: PoseModel
    ee_right: PoseModel
    strict: bool = False


class PoseGenerateResponse(BaseResponse):
    object_pose: PoseModel
    ee_left: PoseModel
    ee_right: PoseModel
    rotation: List[List[float]]
    angle: float
    antiparallel: bool


class TrajectoryPlanRequest(BaseModel):
    """Request model for dual-arm minimum-jerk planning"""
    start_left: PoseModel
    end_left: PoseModel
    start_right: PoseModel
    end_right: PoseModel
    v_max: float = Field(0.25, gt=0)
    omega_max: float = Field(0.5, gt=0)
    t_min: float = Field(2.0, gt=0)
    rate: float = Field(100.0, gt=0, le=1000)
    duration: Optional[float] = Field(None, gt=0)
    include_samples: bool = Field(False, description="Return the sampled positions")


class TrajectoryPlanResponse(BaseResponse):
    trajectory: TrajectoryReport
    samples: Optional[Dict[str, List[List[float]]]] = None


class PipelineRunRequest(BaseModel):
    """Request model for a full pipeline run from a scenario file on the server"""
    scenario_path: str = Field(..., min_length=1)
    seed: Optional[int] = Field(None, ge=0)
    output_directory: Optional[str] = None


class PipelineRunResponse(BaseResponse):
    report: RunReport
    output_directory: str
