"""
Scenario files

A scenario is one YAML document describing a co-carrying situation: where
the skeleton frames and disturbance script live, the human's placement in
the robot frame, the object, the robot's grasp, and every tunable constant
of the pipeline stages. Relative paths are resolved against the scenario
file's directory.
"""

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator

from .ergonomics import (
    DEFAULT_ABDUCTION_RAMP,
    DEFAULT_ELBOW_ANCHORS,
    DEFAULT_ROTATION_RAMP,
    DEFAULT_SHOULDER_ANCHORS,
    ErgonomicModel,
)
from .exceptions import ConfigError
from .ik import IkSettings
from .manipulability import CapacityMode
from .mpic import InteractionModel, MpcGains
from .pose_gen import Pose
from .skeleton import BodyGeometry
from .trajectory import TimingLimits

logger = logging.getLogger(__name__)

Vector3 = Tuple[float, float, float]
Quaternion = Tuple[float, float, float, float]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometryConfig(_Section):
    """Explicit body geometry; omit to calibrate from the frames"""

    upper_arm: float = Field(..., gt=0, description="Shoulder-elbow length (m)")
    forearm: float = Field(..., gt=0, description="Elbow-wrist length (m)")
    shoulder_left: Vector3
    shoulder_right: Vector3

    def to_geometry(self) -> BodyGeometry:
        return BodyGeometry(self.upper_arm, self.forearm, np.array(self.shoulder_left), np.array(self.shoulder_right))


class HumanPlacement(_Section):
    """Torso-frame origin in the robot frame and facing direction (yaw about robot z)"""

    origin: Vector3 = (1.2, 0.0, 1.3)
    yaw_deg: float = 180.0

    @property
    def yaw(self) -> float:
        return math.radians(self.yaw_deg)


class PoseConfig(_Section):
    position: Vector3
    orientation: Quaternion = (1.0, 0.0, 0.0, 0.0)

    def to_pose(self) -> Pose:
        return Pose(np.array(self.position), np.array(self.orientation))


class ObjectConfig(_Section):
    mass: float = Field(..., gt=0, description="Object mass (kg)")
    position: Vector3
    orientation: Quaternion = (1.0, 0.0, 0.0, 0.0)

    def to_pose(self) -> Pose:
        return Pose(np.array(self.position), np.array(self.orientation))


class RobotConfig(_Section):
    """Initial robot end-effector poses in the robot frame"""

    left: PoseConfig
    right: PoseConfig


class IkConfig(_Section):
    max_iterations: int = Field(200, ge=1)
    gtol: float = Field(1e-8, gt=0)
    xtol: float = Field(1e-10, gt=0)
    residual_threshold: float = Field(1e-4, gt=0)
    length_tolerance: float = Field(0.2, gt=0, lt=1)
    frame: int = Field(-1, description="Index into the solved frames used as the initial posture")

    def to_settings(self) -> IkSettings:
        return IkSettings(
            max_iterations=self.max_iterations,
            gtol=self.gtol,
            xtol=self.xtol,
            residual_threshold=self.residual_threshold,
            length_tolerance=self.length_tolerance,
        )


class ErgonomicsConfig(_Section):
    """Anchor points (radians, score) of the continuous scoring curves"""

    shoulder_anchors: List[Tuple[float, float]] = Field(default_factory=lambda: [list(a) for a in DEFAULT_SHOULDER_ANCHORS])
    elbow_anchors: List[Tuple[float, float]] = Field(default_factory=lambda: [list(a) for a in DEFAULT_ELBOW_ANCHORS])
    abduction_ramp: Tuple[float, float] = DEFAULT_ABDUCTION_RAMP
    rotation_ramp: Tuple[float, float] = DEFAULT_ROTATION_RAMP

    @field_validator("shoulder_anchors", "elbow_anchors")
    @classmethod
    def increasing(cls, anchors):
        xs = [a[0] for a in anchors]
        if len(xs) < 2 or any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("need at least two anchors with strictly increasing angles")
        return anchors

    @field_validator("abduction_ramp", "rotation_ramp")
    @classmethod
    def ordered(cls, ramp):
        if not 0 <= ramp[0] < ramp[1]:
            raise ValueError("ramp must satisfy 0 <= start < end")
        return ramp

    def to_model(self) -> ErgonomicModel:
        return ErgonomicModel(
            shoulder_anchors=tuple(tuple(a) for a in self.shoulder_anchors),
            elbow_anchors=tuple(tuple(a) for a in self.elbow_anchors),
            abduction_ramp=tuple(self.abduction_ramp),
            rotation_ramp=tuple(self.rotation_ramp),
        )


class ManipulabilityConfig(_Section):
    """Capacity settings; load_direction is given in the robot frame"""

    mode: CapacityMode = CapacityMode.RADIUS
    load_direction: Vector3 = (0.0, 0.0, 1.0)
    reference_capacity: Optional[float] = Field(None, gt=0, description="m_0; sampled when unset")
    reference_samples: int = Field(2048, ge=16)

    @field_validator("load_direction")
    @classmethod
    def unit(cls, d):
        norm = math.sqrt(sum(x * x for x in d))
        if norm == 0:
            raise ValueError("load_direction must be nonzero")
        return tuple(x / norm for x in d)


class OptimizerConfig(_Section):
    alpha: float = Field(1.0, ge=0)
    beta: float = Field(0.5, ge=0)
    gamma: float = Field(0.2, ge=0)
    epsilon: float = Field(0.02, gt=0, description="Wrist-distance tolerance (m)")
    kappa: float = Field(50.0, gt=0)
    starts: int = Field(8, ge=1)
    perturbation: float = Field(0.15, ge=0)
    max_outer_iterations: int = Field(30, ge=1)
    max_inner_iterations: int = Field(500, ge=1)
    workers: Optional[int] = Field(None, ge=1, description="Threads for the starts; defaults to the process setting")

    @model_validator(mode="after")
    def positive_weights(self):
        if self.alpha + self.beta + self.gamma <= 0:
            raise ValueError("optimizer weights must have a positive sum")
        return self


class PoseGenerationConfig(_Section):
    strict: bool = Field(False, description="Fail on antiparallel wrist vectors instead of flagging")


class TrajectoryConfig(_Section):
    v_max: float = Field(0.25, gt=0)
    omega_max: float = Field(0.5, gt=0)
    t_min: float = Field(2.0, gt=0)

    def to_limits(self) -> TimingLimits:
        return TimingLimits(self.v_max, self.omega_max, self.t_min)


class ControllerConfig(_Section):
    stiffness: float = Field(400.0, gt=0)
    damping: float = Field(40.0, ge=0)
    collaborative: float = Field(200.0, ge=0)
    force_gain: float = Field(0.5, ge=0)
    q_impedance: float = Field(1.0, ge=0)
    q_collaborative: float = Field(1.0, ge=0)
    q_force: float = Field(0.1, ge=0)
    q_input: float = Field(0.01, gt=0)
    horizon: int = Field(20, ge=1)
    dt: float = Field(0.01, gt=0)
    virtual_mass: float = Field(5.0, gt=0)
    input_limit: Optional[float] = Field(150.0, gt=0)
    position_limit: Optional[float] = Field(2.0, gt=0)
    velocity_limit: Optional[float] = Field(1.0, gt=0)
    force_sign: float = 1.0
    max_iterations: Optional[int] = Field(None, ge=1)

    @field_validator("force_sign")
    @classmethod
    def sign(cls, value):
        if value not in (1.0, -1.0):
            raise ValueError("force_sign must be +1 or -1")
        return value

    def to_gains(self) -> MpcGains:
        return MpcGains.impedance(
            stiffness=self.stiffness,
            damping=self.damping,
            collaborative=self.collaborative,
            force_gain=self.force_gain,
            q_impedance=self.q_impedance,
            q_collaborative=self.q_collaborative,
            q_force=self.q_force,
            q_input=self.q_input,
            horizon=self.horizon,
            u_max=self.input_limit,
            position_limit=self.position_limit,
            velocity_limit=self.velocity_limit,
            force_sign=self.force_sign,
        )

    def to_model(self, arm_damping: float = 0.0) -> InteractionModel:
        return InteractionModel.double_integrator(self.virtual_mass, arm_damping, self.dt)

    @property
    def rate(self) -> float:
        return 1.0 / self.dt


class SimulationConfig(_Section):
    coupling_stiffness: float = Field(1e4, gt=0)
    coupling_damping: float = Field(200.0, ge=0)
    arm_damping: float = Field(0.0, ge=0)
    settle: float = Field(2.0, ge=0)
    gravity: float = Field(9.81, ge=0)


class ScenarioConfig(_Section):
    """One co-carrying scenario"""

    name: str
    subject: str = "default"
    seed: int = Field(0, ge=0)
    frames: str = Field(..., description="Skeleton frames CSV")
    disturbances: Optional[str] = Field(None, description="Disturbance script CSV")
    output_directory: Optional[str] = None
    geometry: Optional[GeometryConfig] = None
    human: HumanPlacement = Field(default_factory=HumanPlacement)
    object: ObjectConfig
    robot: RobotConfig
    ik: IkConfig = Field(default_factory=IkConfig)
    ergonomics: ErgonomicsConfig = Field(default_factory=ErgonomicsConfig)
    manipulability: ManipulabilityConfig = Field(default_factory=ManipulabilityConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    pose_generation: PoseGenerationConfig = Field(default_factory=PoseGenerationConfig)
    trajectory: TrajectoryConfig = Field(default_factory=TrajectoryConfig)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)

    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @property
    def base_dir(self) -> Path:
        return self._base_dir

    def resolve(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        return path if path.is_absolute() else (self._base_dir / path).resolve()

    @property
    def frames_path(self) -> Path:
        return self.resolve(self.frames)

    @property
    def disturbances_path(self) -> Optional[Path]:
        return None if self.disturbances is None else self.resolve(self.disturbances)

    def with_base_dir(self, base_dir: Path) -> "ScenarioConfig":
        self._base_dir = Path(base_dir)
        return self

    def check_files(self) -> None:
        """
        Raises:
            ConfigError: A referenced input file does not exist
        """
        for label, path in (("frames", self.frames_path), ("disturbances", self.disturbances_path)):
            if path is not None and not path.is_file():
                raise ConfigError(f"{label} file not found: {path}", details={"path": str(path)})


def config_hash(scenario: ScenarioConfig, seed: Optional[int] = None) -> str:
    """SHA-256 of the canonical JSON form of the scenario plus the effective seed"""
    payload = scenario.model_dump(mode="json")
    payload["seed"] = scenario.seed if seed is None else int(seed)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_scenario(data: dict, base_dir: Union[str, Path, None] = None) -> ScenarioConfig:
    """
    Validate an already-loaded scenario mapping

    Raises:
        ConfigError: Validation failed
    """
    try:
        scenario = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        errors = [
            {"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
            for err in exc.errors()
        ]
        raise ConfigError(f"invalid scenario: {errors[0]['field']}: {errors[0]['message']}", details={"errors": errors}) from exc
    return scenario.with_base_dir(Path(base_dir) if base_dir is not None else Path.cwd())


def load_scenario(path: Union[str, Path], check_files: bool = True) -> ScenarioConfig:
    """
    Load a scenario YAML file

    Args:
        path: Scenario file
        check_files: Verify that the referenced input files exist

    Returns:
        ScenarioConfig with relative paths anchored at the file's directory

    Raises:
        ConfigError: Missing file, YAML syntax error or invalid content
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}", details={"path": str(path)})
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse scenario file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"scenario file {path} must contain a mapping")

    scenario = parse_scenario(data, path.resolve().parent)
    if check_files:
        scenario.check_files()
    logger.info(f"Loaded scenario '{scenario.name}' from {path}")
    return scenario
