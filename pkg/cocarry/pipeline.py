"""
Scenario pipeline: frames -> IK -> posture optimization -> pose generation
-> trajectory planning -> closed-loop simulation

Each stage writes a JSON stage file (tagged with the config hash) plus its
CSV side files into the run directory. A stage run on its own reuses the
upstream stage files when their hash matches and recomputes them otherwise,
so running the stages one by one gives the same numbers as a full run.
"""

import json
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from .config import current_settings
from .ergonomics import ErgonomicScore
from .exceptions import CoCarryError, ConfigError, InfeasibleFrame, ParseError, StageError, UnitSanityError
from .ik import SkeletonFrame, check_frame, solve_sequence
from .manipulability import arm_capacity
from .models import (
    CapacityBreakdown,
    CostBreakdown,
    GeometryModel,
    IkReport,
    PoseGenerationReport,
    PoseModel,
    PostureReport,
    RunReport,
    ScoreBreakdown,
    SimulationReport,
    TrajectoryReport,
)
from .mpic import MpcController
from .plant import CoupledPlant, DisturbanceScript, ObjectModel, simulate
from .pose_gen import GraspConfiguration, Pose, generate_targets, robot_to_torso_direction, torso_to_robot
from .posture_opt import CostEvaluation, PostureProblem, PostureSolution, optimize_posture
from .scenario import ScenarioConfig, config_hash, load_scenario
from .skeleton import ArmPoints, ArmState, BodyGeometry, Side, calibrate_geometry
from .trajectory import DualTrajectory, export_trajectory_csv, path_length, peak_speed, plan_dual, rotation_angle
from .utils import export_to_csv, export_to_json

logger = logging.getLogger(__name__)

JOINTS = ("shoulder", "elbow", "wrist")
FRAME_COLUMNS = ["t"] + [f"{side}_{joint}_{axis}" for side in ("left", "right") for joint in JOINTS for axis in "xyz"]
SEGMENT_BAND = (0.1, 0.6)

STAGES = ("ik", "optimize", "posegen", "plan", "simulate")
STAGE_FILES = {
    "ik": "ik.json",
    "optimize": "posture.json",
    "posegen": "poses.json",
    "plan": "plan.json",
    "simulate": "simulation.json",
}
STAGE_MODELS = {
    "ik": IkReport,
    "optimize": PostureReport,
    "posegen": PoseGenerationReport,
    "plan": TrajectoryReport,
    "simulate": SimulationReport,
}


def ingest_frames(
    path: Union[str, Path],
    geometry: Optional[BodyGeometry] = None,
    length_tolerance: float = 0.2,
) -> List[SkeletonFrame]:
    """
    Load skeleton frames from CSV

    Args:
        path: CSV with columns t, left_shoulder_x .. right_wrist_z (meters, torso frame)
        geometry: Reference geometry for the sanity flags; defaults to the
            median segment lengths of the file
        length_tolerance: Relative segment-length deviation that flags a frame

    Returns:
        Frames sorted by time (stable), each carrying its sanity flags

    Raises:
        ParseError: Unreadable file, missing column or malformed row (1-based line number)
        UnitSanityError: Median segment lengths outside 0.1-0.6 m
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path, skipinitialspace=True)
    except FileNotFoundError as exc:
        raise ParseError(f"frames file not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError(f"frames file is empty: {path}", line=1) from exc
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        line = int(match.group(1)) if match else None
        raise ParseError(f"malformed row in {path.name}: {exc}", line=line) from exc

    missing = [c for c in FRAME_COLUMNS if c not in raw.columns]
    if missing:
        raise ParseError(f"{path.name} is missing columns {missing}", line=1)
    if raw.empty:
        raise ParseError(f"{path.name} contains no frames", line=2)

    numeric = raw[FRAME_COLUMNS].apply(pd.to_numeric, errors="coerce")
    finite = np.isfinite(numeric.to_numpy(dtype=float))
    if not finite.all():
        row, col = np.argwhere(~finite)[0]
        line = int(row) + 2
        raise ParseError(
            f"{path.name} line {line}: missing or non-numeric value in column '{FRAME_COLUMNS[col]}'",
            line=line,
            details={"column": FRAME_COLUMNS[col]},
        )

    numeric = numeric.sort_values("t", kind="mergesort").reset_index(drop=True)
    values = numeric.to_numpy(dtype=float)

    frames = []
    for row in values:
        points = row[1:].reshape(2, 3, 3)
        frames.append(SkeletonFrame(float(row[0]), ArmPoints(*points[0]), ArmPoints(*points[1])))

    upper = [frame.arm(side).upper_arm_length for frame in frames for side in Side]
    fore = [frame.arm(side).forearm_length for frame in frames for side in Side]
    medians = {"upper_arm": float(np.median(upper)), "forearm": float(np.median(fore))}
    low, high = SEGMENT_BAND
    if not all(low <= v <= high for v in medians.values()):
        raise UnitSanityError(
            f"median segment lengths {medians} are outside {low}-{high} m; check the file's units",
            details=medians,
        )

    reference = geometry or calibrate_geometry(frames)
    flagged = 0
    for i, frame in enumerate(frames):
        flags = check_frame(frame, reference, length_tolerance)
        if flags:
            frames[i] = replace(frame, flags=tuple(flags))
            flagged += 1
            logger.warning(f"⚠️ Frame t={frame.timestamp:g} flagged: {', '.join(flags)}")

    logger.info(f"Ingested {len(frames)} frames from {path.name} ({flagged} flagged)")
    return frames


def geometry_model(geom: BodyGeometry) -> GeometryModel:
    return GeometryModel(
        upper_arm=geom.d_ua,
        forearm=geom.d_fa,
        shoulder_left=geom.p_s_left.tolist(),
        shoulder_right=geom.p_s_right.tolist(),
    )


def to_geometry(model: GeometryModel) -> BodyGeometry:
    return BodyGeometry(model.upper_arm, model.forearm, np.array(model.shoulder_left), np.array(model.shoulder_right))


def pose_model(pose: Pose) -> PoseModel:
    return PoseModel(position=pose.position.tolist(), orientation=pose.orientation.tolist())


def to_pose(model: PoseModel) -> Pose:
    return Pose(np.array(model.position), np.array(model.orientation))


def score_breakdown(score: ErgonomicScore) -> ScoreBreakdown:
    return ScoreBreakdown(
        left=score.s_left,
        right=score.s_right,
        overall=score.s_overall,
        worst_side=score.worst_side,
        left_shoulder=score.left.s_shoulder,
        left_elbow=score.left.s_elbow,
        right_shoulder=score.right.s_shoulder,
        right_elbow=score.right.s_elbow,
    )


def cost_breakdown(cost: CostEvaluation) -> CostBreakdown:
    return CostBreakdown(
        total=cost.total,
        ergonomic=cost.ergonomic,
        manipulability=cost.manipulability,
        deviation=cost.deviation,
    )


def posture_report(solution: PostureSolution, load_dir: np.ndarray) -> PostureReport:
    direction = np.asarray(load_dir, dtype=float).tolist()
    return PostureReport(
        q_init=solution.q_init.tolist(),
        q_opt=solution.q_opt.tolist(),
        m_0=solution.m_0,
        cost_before=cost_breakdown(solution.cost_init),
        cost_after=cost_breakdown(solution.cost_opt),
        scores_before=score_breakdown(solution.scores_init),
        scores_after=score_breakdown(solution.scores_opt),
        capacity_before=CapacityBreakdown(direction=direction, left=solution.cost_init.capacities[0], right=solution.cost_init.capacities[1]),
        capacity_after=CapacityBreakdown(direction=direction, left=solution.cost_opt.capacities[0], right=solution.cost_opt.capacities[1]),
        wrists_before=[w.tolist() for w in solution.wrists_init],
        wrists_after=[w.tolist() for w in solution.wrists_opt],
        constraint_residual=solution.constraint_residual,
        no_improvement=solution.no_improvement,
        start_index=solution.start_index,
        start_costs=solution.start_costs,
    )


def trajectory_report(trajectory: DualTrajectory, rate: float) -> TrajectoryReport:
    left, right = trajectory.left, trajectory.right
    return TrajectoryReport(
        duration=left.duration,
        samples=len(left),
        rate=rate,
        start_left=pose_model(left.pose(0)),
        end_left=pose_model(left.pose(-1)),
        start_right=pose_model(right.pose(0)),
        end_right=pose_model(right.pose(-1)),
        peak_speed_left=peak_speed(left),
        peak_speed_right=peak_speed(right),
        path_length_left=path_length(left),
        path_length_right=path_length(right),
        rotation_angle=rotation_angle(left),
    )


def _arm_states(q: List[float]) -> Tuple[ArmState, ArmState]:
    q = np.asarray(q, dtype=float)
    return ArmState(q[:4], Side.LEFT), ArmState(q[4:], Side.RIGHT)


class Pipeline:
    """
    Stage runner for one scenario

    Args:
        scenario: Validated scenario
        output_dir: Run directory; defaults to the scenario's output_directory
            or <settings.output_directory>/<scenario name>
        seed: Overrides the scenario seed
        reuse: Load upstream stage files from the run directory when their
            config hash matches
    """

    def __init__(
        self,
        scenario: ScenarioConfig,
        output_dir: Optional[Union[str, Path]] = None,
        seed: Optional[int] = None,
        reuse: bool = False,
    ):
        self.seed = scenario.seed if seed is None else int(seed)
        self.scenario = scenario if seed is None else scenario.model_copy(update={"seed": self.seed})
        self.config_hash = config_hash(self.scenario)
        if output_dir is not None:
            self.output_dir = Path(output_dir)
        elif scenario.output_directory is not None:
            self.output_dir = scenario.resolve(scenario.output_directory)
        else:
            self.output_dir = Path(current_settings.output_directory) / scenario.name
        self.reuse = reuse
        self.outputs: List[str] = []
        self._results: Dict[str, BaseModel] = {}
        self._runners: Dict[str, Callable[[], BaseModel]] = {
            "ik": self._run_ik,
            "optimize": self._run_optimize,
            "posegen": self._run_posegen,
            "plan": self._run_plan,
            "simulate": self._run_simulate,
        }

    # Stage bookkeeping
    def stage(self, name: str) -> BaseModel:
        """
        Result of a stage, computing (and writing) it if needed

        Raises:
            StageError: The stage or one of its upstream stages failed
        """
        if name not in self._runners:
            raise ValueError(f"unknown stage '{name}'")
        if name in self._results:
            return self._results[name]
        if self.reuse:
            cached = self._load(name)
            if cached is not None:
                self._results[name] = cached
                return cached

        logger.info(f"Running stage '{name}' for scenario '{self.scenario.name}'")
        try:
            result = self._runners[name]()
        except StageError:
            raise
        except (CoCarryError, ValueError, np.linalg.LinAlgError) as exc:
            logger.error(f"❌ Stage '{name}' failed: {exc}")
            raise StageError(name, exc) from exc

        self._results[name] = result
        self._write_json(STAGE_FILES[name], {"stage": name, "config_hash": self.config_hash, "report": result.model_dump(mode="json")})
        return result

    def _load(self, name: str) -> Optional[BaseModel]:
        path = self.output_dir / STAGE_FILES[name]
        if not path.is_file():
            return None
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
            if payload.get("config_hash") != self.config_hash:
                logger.info(f"Stage file {path.name} belongs to another configuration; recomputing")
                return None
            result = STAGE_MODELS[name].model_validate(payload["report"])
        except (ValueError, KeyError) as exc:
            logger.warning(f"⚠️ Ignoring unreadable stage file {path}: {exc}")
            return None
        logger.info(f"Reusing stage '{name}' from {path.name}")
        return result

    def _write_json(self, filename: str, data: Any) -> Path:
        path = self.output_dir / filename
        export_to_json(data, path)
        self._record(filename)
        return path

    def _write_csv(self, filename: str, data: Union[pd.DataFrame, List[Dict[str, Any]]]) -> Path:
        path = export_to_csv(data, self.output_dir / filename)
        self._record(filename)
        return path

    def _record(self, filename: str) -> None:
        if filename not in self.outputs:
            self.outputs.append(filename)

    # Stages
    def _run_ik(self) -> IkReport:
        cfg = self.scenario
        explicit = cfg.geometry.to_geometry() if cfg.geometry is not None else None
        frames = ingest_frames(cfg.frames_path, explicit, cfg.ik.length_tolerance)
        if explicit is not None:
            geom = explicit
        else:
            clean = [f for f in frames if not f.flags] or frames
            geom = calibrate_geometry(clean)
            frames = [replace(f, flags=tuple(check_frame(f, geom, cfg.ik.length_tolerance))) for f in frames]

        solutions = solve_sequence(frames, geom, cfg.ik.to_settings(), skip_flagged=True)
        solved = [s for s in solutions if s is not None]
        if not solved:
            raise InfeasibleFrame(
                "no frame passed the segment-length check",
                details={"frames": len(frames)},
            )
        try:
            selected = solved[cfg.ik.frame]
        except IndexError as exc:
            raise ConfigError(f"ik.frame={cfg.ik.frame} is out of range for {len(solved)} solved frames") from exc

        rows = []
        for frame, solution in zip(frames, solutions):
            row: Dict[str, Any] = {"t": frame.timestamp, "flags": ";".join(frame.flags)}
            for side in Side:
                result = None if solution is None else (solution.left if side is Side.LEFT else solution.right)
                for j in range(4):
                    row[f"{side.value}_q{j + 1}"] = np.nan if result is None else float(result.state.q[j])
                row[f"{side.value}_residual"] = np.nan if result is None else result.residual
            rows.append(row)
        self._write_csv("ik_frames.csv", rows)

        residuals = [max(s.left.residual, s.right.residual) for s in solved]
        return IkReport(
            frames_total=len(frames),
            frames_solved=len(solved),
            frames_flagged=sum(1 for f in frames if f.flags),
            flags={f"{f.timestamp:g}": list(f.flags) for f in frames if f.flags},
            max_residual=float(np.max(residuals)),
            mean_residual=float(np.mean(residuals)),
            selected_time=selected.timestamp,
            q_init=selected.q().tolist(),
            geometry=geometry_model(geom),
            calibrated=explicit is None,
        )

    def _posture_problem(self, ik: IkReport) -> PostureProblem:
        cfg = self.scenario
        opt, manip = cfg.optimizer, cfg.manipulability
        return PostureProblem(
            q_init=np.array(ik.q_init),
            geom=to_geometry(ik.geometry),
            load_dir=robot_to_torso_direction(manip.load_direction, cfg.human.yaw),
            alpha=opt.alpha,
            beta=opt.beta,
            gamma=opt.gamma,
            m_0=manip.reference_capacity,
            epsilon=opt.epsilon,
            kappa=opt.kappa,
            n_starts=opt.starts,
            perturbation=opt.perturbation,
            seed=self.seed,
            capacity_mode=manip.mode,
            ergonomics=cfg.ergonomics.to_model(),
            reference_samples=manip.reference_samples,
            max_outer_iterations=opt.max_outer_iterations,
            max_inner_iterations=opt.max_inner_iterations,
            workers=opt.workers or current_settings.multistart_workers,
        )

    def _run_optimize(self) -> PostureReport:
        ik = self.stage("ik")
        prob = self._posture_problem(ik)
        report = posture_report(optimize_posture(prob), prob.load_dir)

        rows = []
        for label, scores in (("before", report.scores_before), ("after", report.scores_after)):
            for arm in ("left", "right"):
                for component in ("shoulder", "elbow"):
                    rows.append({"posture": label, "arm": arm, "component": component, "score": getattr(scores, f"{arm}_{component}")})
                rows.append({"posture": label, "arm": arm, "component": "arm", "score": getattr(scores, arm)})
            rows.append({"posture": label, "arm": "both", "component": "overall", "score": scores.overall})
        self._write_csv("scores.csv", rows)
        return report

    def _run_posegen(self) -> PoseGenerationReport:
        cfg = self.scenario
        ik = self.stage("ik")
        posture = self.stage("optimize")
        origin, yaw = np.array(cfg.human.origin), cfg.human.yaw

        wrists_before = [torso_to_robot(w, origin, yaw) for w in posture.wrists_before]
        wrists_after = [torso_to_robot(w, origin, yaw) for w in posture.wrists_after]
        grasp = GraspConfiguration(
            wrist_left=wrists_before[0],
            wrist_right=wrists_before[1],
            wrist_left_opt=wrists_after[0],
            wrist_right_opt=wrists_after[1],
            object_pose=cfg.object.to_pose(),
            ee_left=cfg.robot.left.to_pose(),
            ee_right=cfg.robot.right.to_pose(),
        )
        targets = generate_targets(grasp, strict=cfg.pose_generation.strict)

        movement_before = movement_after = None
        displacement = targets.object_pose.position - grasp.object_pose.position
        if np.linalg.norm(displacement) > 1e-9:
            direction = robot_to_torso_direction(displacement / np.linalg.norm(displacement), yaw)
            direction = direction / np.linalg.norm(direction)
            geom, mode = to_geometry(ik.geometry), cfg.manipulability.mode
            capacities = []
            for q in (posture.q_init, posture.q_opt):
                left, right = _arm_states(q)
                capacities.append(
                    CapacityBreakdown(
                        direction=direction.tolist(),
                        left=arm_capacity(left, geom, direction, mode)[0],
                        right=arm_capacity(right, geom, direction, mode)[0],
                    )
                )
            movement_before, movement_after = capacities

        return PoseGenerationReport(
            object_before=pose_model(grasp.object_pose),
            object_after=pose_model(targets.object_pose),
            ee_left_before=pose_model(grasp.ee_left),
            ee_left_after=pose_model(targets.ee_left),
            ee_right_before=pose_model(grasp.ee_right),
            ee_right_after=pose_model(targets.ee_right),
            wrists_before=[w.tolist() for w in wrists_before],
            wrists_after=[w.tolist() for w in wrists_after],
            rotation=targets.rotation.tolist(),
            angle=targets.angle,
            antiparallel=targets.antiparallel,
            movement_capacity_before=movement_before,
            movement_capacity_after=movement_after,
        )

    def _trajectory(self, poses: PoseGenerationReport, duration: Optional[float] = None) -> DualTrajectory:
        cfg = self.scenario
        return plan_dual(
            to_pose(poses.ee_left_before),
            to_pose(poses.ee_left_after),
            to_pose(poses.ee_right_before),
            to_pose(poses.ee_right_after),
            limits=cfg.trajectory.to_limits(),
            rate=cfg.controller.rate,
            duration=duration,
        )

    def _run_plan(self) -> TrajectoryReport:
        poses = self.stage("posegen")
        trajectory = self._trajectory(poses)
        export_trajectory_csv(trajectory, self.output_dir / "trajectory.csv")
        self._record("trajectory.csv")
        return trajectory_report(trajectory, self.scenario.controller.rate)

    def _run_simulate(self) -> SimulationReport:
        cfg = self.scenario
        poses = self.stage("posegen")
        plan = self.stage("plan")
        trajectory = self._trajectory(poses, duration=plan.duration)

        ctrl, sim = cfg.controller, cfg.simulation
        controller = MpcController(ctrl.to_model(sim.arm_damping), ctrl.to_gains(), ctrl.max_iterations)
        obj = ObjectModel(
            mass=cfg.object.mass,
            spring=sim.coupling_stiffness,
            damping=sim.coupling_damping,
            gravity=np.array([0.0, 0.0, -sim.gravity]),
        )
        object_position = np.array(poses.object_before.position)
        offsets = np.vstack(
            [np.array(poses.ee_left_before.position) - object_position, np.array(poses.ee_right_before.position) - object_position]
        )
        plant = CoupledPlant(obj, offsets, ctrl.virtual_mass, sim.arm_damping, ctrl.dt)
        path = cfg.disturbances_path
        disturbances = DisturbanceScript.from_csv(path) if path is not None else DisturbanceScript.none()

        result = simulate(trajectory, controller, plant, disturbances, settle=sim.settle)
        self._write_csv("simulation.csv", result.log)
        if result.diverged:
            logger.warning(f"⚠️ Simulation of '{cfg.name}' diverged")
        return SimulationReport(disturbance_events=len(disturbances), **result.summary)

    # Entry points
    def run(self) -> RunReport:
        """Run every stage and write report.json"""
        for name in STAGES:
            self.stage(name)
        report = RunReport(
            scenario=self.scenario.name,
            subject=self.scenario.subject,
            seed=self.seed,
            config_hash=self.config_hash,
            version=current_settings.app_version,
            ik=self._results["ik"],
            posture=self._results["optimize"],
            poses=self._results["posegen"],
            trajectory=self._results["plan"],
            simulation=self._results["simulate"],
            outputs=sorted(self.outputs + ["report.json"]),
        )
        write_report(report, self.output_dir / "report.json")
        logger.info(
            f"✅ Scenario '{report.scenario}' done: score {report.posture.scores_before.overall:.3f} -> "
            f"{report.posture.scores_after.overall:.3f}, outputs in {self.output_dir}"
        )
        return report


def write_report(report: RunReport, path: Union[str, Path]) -> Path:
    """Serialize a report without its timestamp so reruns are byte-identical"""
    path = Path(path)
    export_to_json(report.model_dump(mode="json", exclude={"created_at"}), path)
    return path


def run_pipeline(
    scenario: ScenarioConfig,
    output_dir: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
) -> RunReport:
    """
    Run the full pipeline for one scenario

    Raises:
        StageError: Tagged with the failing stage
    """
    return Pipeline(scenario, output_dir, seed).run()


def _run_scenario_file(args: Tuple[str, str, Optional[int]]) -> Dict[str, Any]:
    path, output_dir, seed = args
    try:
        scenario = load_scenario(path)
        report = run_pipeline(scenario, output_dir, seed)
        return {"path": path, "status": "ok", "report": report.model_dump(mode="json")}
    except CoCarryError as exc:
        return {"path": path, "status": "error", "error": exc.to_dict()}
    except Exception as exc:
        logger.error(f"❌ Unexpected failure in scenario {path}: {exc}")
        error = {"error_code": "internal_error", "error_message": str(exc), "details": {"type": type(exc).__name__}, "stage": None}
        return {"path": path, "status": "error", "error": error}


def run_batch(
    directory: Union[str, Path],
    output_dir: Union[str, Path],
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> List[Dict[str, Any]]:
    """
    Run every scenario file (*.yaml, *.yml) in a directory concurrently

    Each scenario writes into <output_dir>/<file stem>. Failures are
    collected, not raised.

    Returns:
        One entry per scenario, in file-name order, with status and report or error
    """
    directory, output_dir = Path(directory), Path(output_dir)
    if not directory.is_dir():
        raise ConfigError(f"batch directory not found: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix in (".yaml", ".yml"))
    if not files:
        raise ConfigError(f"no scenario files in {directory}")

    jobs = [(str(p), str(output_dir / p.stem), seed) for p in files]
    workers = workers or current_settings.batch_workers
    logger.info(f"Running batch of {len(jobs)} scenarios with {workers} workers")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_scenario_file, jobs))
    else:
        results = [_run_scenario_file(job) for job in jobs]

    failed = [r["path"] for r in results if r["status"] != "ok"]
    if failed:
        logger.warning(f"⚠️ {len(failed)} scenario(s) failed: {', '.join(failed)}")
    return results
