"""
Closed-loop simulation of two impedance-controlled arms carrying an object

The plant couples the two Cartesian arm masses to a point-mass object
through stiff spring-dampers at the grasp points, with gravity on the
object. It is linear, so each control period is integrated exactly with the
matrix exponential under a zero-order hold on the inputs.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import expm

from .exceptions import ParseError
from .mpic import MpcController, MpcStep, reference_window
from .trajectory import DualTrajectory
from .utils import quat_to_scipy

logger = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.81])
DISTURBANCE_TARGETS = ("left", "right", "both", "object")
DIVERGENCE_LIMIT = 1e3


@dataclass(frozen=True)
class ObjectModel:
    """Carried object and the grasp coupling"""

    mass: float
    spring: float = 1e4
    damping: float = 200.0
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        if self.mass <= 0 or self.spring <= 0 or self.damping < 0:
            raise ValueError("object mass and coupling spring must be positive, damping non-negative")

    @property
    def weight(self) -> np.ndarray:
        return self.mass * np.asarray(self.gravity, dtype=float)

    def load_share(self) -> np.ndarray:
        """Static force each grasp point feels when the load is shared equally, (6,)"""
        return np.tile(0.5 * self.weight, 2)


class DisturbanceScript:
    """
    Piecewise-constant external forces

    Each row sets the force on its target from time ``t`` onwards, until a
    later row for the same target. ``both`` sets the two arms at once.
    """

    COLUMNS = ("t", "arm", "fx", "fy", "fz")

    def __init__(self, events: Optional[pd.DataFrame] = None):
        if events is None:
            events = pd.DataFrame({c: pd.Series(dtype=float if c != "arm" else object) for c in self.COLUMNS})
        self.events = events.sort_values("t", kind="mergesort").reset_index(drop=True)
        self._tables: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
        for target in ("left", "right", "object"):
            names = (target, "both") if target != "object" else ("object",)
            rows = self.events[self.events["arm"].isin(names)]
            self._tables[target] = (
                rows["t"].to_numpy(dtype=float),
                rows[["fx", "fy", "fz"]].to_numpy(dtype=float).reshape(-1, 3),
            )

    def __len__(self) -> int:
        return len(self.events)

    @classmethod
    def none(cls) -> "DisturbanceScript":
        return cls()

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "DisturbanceScript":
        """
        Load a disturbance script

        Raises:
            ParseError: Missing columns, unknown target or non-numeric values
        """
        path = Path(path)
        try:
            frame = pd.read_csv(path, skipinitialspace=True)
        except FileNotFoundError as exc:
            raise ParseError(f"disturbance file not found: {path}") from exc
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise ParseError(f"cannot parse disturbance file {path}: {exc}") from exc

        missing = [c for c in cls.COLUMNS if c not in frame.columns]
        if missing:
            raise ParseError(f"disturbance file {path} is missing columns {missing}", line=1)
        frame["arm"] = frame["arm"].astype(str).str.strip().str.lower()
        for index, row in frame.iterrows():
            if row["arm"] not in DISTURBANCE_TARGETS:
                raise ParseError(f"unknown disturbance target '{row['arm']}'", line=int(index) + 2)
            for column in ("t", "fx", "fy", "fz"):
                try:
                    value = float(row[column])
                except (TypeError, ValueError) as exc:
                    raise ParseError(f"non-numeric {column} in disturbance file", line=int(index) + 2) from exc
                if not np.isfinite(value):
                    raise ParseError(f"non-finite {column} in disturbance file", line=int(index) + 2)
        frame[["t", "fx", "fy", "fz"]] = frame[["t", "fx", "fy", "fz"]].astype(float)
        logger.info(f"Loaded {len(frame)} disturbance events from {path.name}")
        return cls(frame[list(cls.COLUMNS)])

    def _active(self, target: str, t: float) -> np.ndarray:
        times, forces = self._tables[target]
        i = int(np.searchsorted(times, t + 1e-12, side="right")) - 1
        return forces[i].copy() if i >= 0 else np.zeros(3)

    def forces_at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """(arm forces (6,), object force (3,)) active at time t"""
        arms = np.concatenate([self._active("left", t), self._active("right", t)])
        return arms, self._active("object", t)


class CoupledPlant:
    """
    Arms and object as one linear system

    State [p_l, v_l, p_r, v_r, p_o, v_o] (18). Inputs per period: controller
    forces (6), arm disturbances (6), object disturbance (3), grasp offsets
    of each end effector from the object (6) and a unit gravity input.
    """

    def __init__(
        self,
        obj: ObjectModel,
        offsets: np.ndarray,
        arm_mass: float = 5.0,
        arm_damping: float = 0.0,
        dt: float = 0.01,
    ):
        self.obj = obj
        self.offsets = np.asarray(offsets, dtype=float).reshape(2, 3)
        self.arm_mass = arm_mass
        self.arm_damping = arm_damping
        self.dt = dt
        self.A_c, self.B_c = self._continuous()
        self.A_d, self.B_d = self._discretize(dt)

    def _continuous(self) -> Tuple[np.ndarray, np.ndarray]:
        k, c, m_a, m_o = self.obj.spring, self.obj.damping, self.arm_mass, self.obj.mass
        eye = np.eye(3)
        A = np.zeros((18, 18))
        B = np.zeros((18, 22))
        pos = {"left": 0, "right": 6, "object": 12}

        for p in pos.values():
            A[p:p + 3, p + 3:p + 6] = eye

        o = pos["object"]
        for arm_index, arm in enumerate(("left", "right")):
            p = pos[arm]
            # arm: m_a a = u + d - damping v - k (p - p_o - off) - c (v - v_o)
            A[p + 3:p + 6, p:p + 3] = -k / m_a * eye
            A[p + 3:p + 6, o:o + 3] = k / m_a * eye
            A[p + 3:p + 6, p + 3:p + 6] = -(c + self.arm_damping) / m_a * eye
            A[p + 3:p + 6, o + 3:o + 6] = c / m_a * eye
            B[p + 3:p + 6, 3 * arm_index:3 * arm_index + 3] = eye / m_a
            B[p + 3:p + 6, 6 + 3 * arm_index:9 + 3 * arm_index] = eye / m_a
            B[p + 3:p + 6, 15 + 3 * arm_index:18 + 3 * arm_index] = k / m_a * eye
            # object side of the same spring-damper
            A[o + 3:o + 6, p:p + 3] = k / m_o * eye
            A[o + 3:o + 6, o:o + 3] -= k / m_o * eye
            A[o + 3:o + 6, p + 3:p + 6] = c / m_o * eye
            A[o + 3:o + 6, o + 3:o + 6] -= c / m_o * eye
            B[o + 3:o + 6, 15 + 3 * arm_index:18 + 3 * arm_index] = -k / m_o * eye

        B[o + 3:o + 6, 12:15] = eye / m_o
        B[o + 3:o + 6, 21] = np.asarray(self.obj.gravity, dtype=float)
        return A, B

    def _discretize(self, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        n, m = self.B_c.shape
        augmented = np.zeros((n + m, n + m))
        augmented[:n, :n] = self.A_c
        augmented[:n, n:] = self.B_c
        phi = expm(augmented * dt)
        return phi[:n, :n], phi[:n, n:]

    def initial_state(self, p_left: np.ndarray, p_right: np.ndarray) -> np.ndarray:
        """Arms at rest, object at its static equilibrium below the grasp"""
        grasp = 0.5 * ((p_left - self.offsets[0]) + (p_right - self.offsets[1]))
        sag = self.obj.weight / (2.0 * self.obj.spring)
        state = np.zeros(18)
        state[0:3] = p_left
        state[6:9] = p_right
        state[12:15] = grasp + sag
        return state

    @staticmethod
    def arm_state(state: np.ndarray) -> np.ndarray:
        """Controller state [p_l, v_l, p_r, v_r]"""
        return state[:12].copy()

    def grasp_forces(self, state: np.ndarray, offsets: Optional[np.ndarray] = None) -> np.ndarray:
        """Spring-damper force the object applies at each grasp point, (6,)"""
        k, c = self.obj.spring, self.obj.damping
        offsets = self.offsets if offsets is None else np.asarray(offsets, dtype=float).reshape(2, 3)
        p_o, v_o = state[12:15], state[15:18]
        forces = []
        for i, p in enumerate((0, 6)):
            forces.append(-k * (state[p:p + 3] - p_o - offsets[i]) - c * (state[p + 3:p + 6] - v_o))
        return np.concatenate(forces)

    def measured_forces(self, state: np.ndarray, arm_disturbance: np.ndarray, offsets: Optional[np.ndarray] = None) -> np.ndarray:
        """External force at each end effector as a wrist sensor would read it"""
        return self.grasp_forces(state, offsets) + arm_disturbance

    def step(
        self,
        state: np.ndarray,
        u: np.ndarray,
        arm_disturbance: np.ndarray,
        object_disturbance: np.ndarray,
        offsets: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        offsets = self.offsets if offsets is None else np.asarray(offsets, dtype=float).reshape(2, 3)
        inputs = np.concatenate([u, arm_disturbance, object_disturbance, offsets.reshape(-1), [1.0]])
        return self.A_d @ state + self.B_d @ inputs


@dataclass
class SimulationResult:
    log: pd.DataFrame
    summary: Dict[str, float]
    diverged: bool = False

    @property
    def terminal_error(self) -> float:
        return self.summary["terminal_error"]


def _columns(prefix: str, names: str = "xyz") -> list:
    return [f"{prefix}{a}" for a in names]


def _reference_states(trajectory: DualTrajectory) -> np.ndarray:
    return np.hstack([trajectory.left.states(), trajectory.right.states()])


def grasp_offsets(trajectory: DualTrajectory, initial: np.ndarray) -> np.ndarray:
    """
    Grasp offsets along the trajectory, (n, 2, 3)

    The object turns rigidly with the end effectors, so the initial offsets
    are rotated by the left end effector's rotation since the start.
    """
    initial = np.asarray(initial, dtype=float).reshape(2, 3)
    start = quat_to_scipy(trajectory.left.orientations[0])
    rotations = quat_to_scipy(trajectory.left.orientations) * start.inv()
    return np.stack([rotations.apply(initial[0]), rotations.apply(initial[1])], axis=1)


def simulate(
    trajectory: DualTrajectory,
    controller: MpcController,
    plant: CoupledPlant,
    disturbances: Optional[DisturbanceScript] = None,
    settle: float = 2.0,
    f_ref: Optional[np.ndarray] = None,
) -> SimulationResult:
    """
    Run the controller against the coupled plant along a planned trajectory

    Args:
        trajectory: Dual-arm reference sampled at the controller period
        controller: MPIC controller (stepped sequentially)
        plant: Coupled arm/object plant with the same period
        disturbances: External force script
        settle: Seconds holding the final reference after the trajectory ends
        f_ref: Desired end-effector forces (6,); defaults to the static load share

    Returns:
        SimulationResult; divergence is reported, not raised
    """
    dt = controller.model.dt
    if abs(plant.dt - dt) > 1e-12:
        raise ValueError(f"plant period {plant.dt} differs from controller period {dt}")
    if len(trajectory.t) > 1 and abs((trajectory.t[1] - trajectory.t[0]) - dt) > 1e-9:
        raise ValueError("trajectory sample period must equal the controller period")

    disturbances = disturbances or DisturbanceScript.none()
    f_ref = plant.obj.load_share() if f_ref is None else np.asarray(f_ref, dtype=float)
    references = _reference_states(trajectory)
    offsets = grasp_offsets(trajectory, plant.offsets)
    n_move = len(references)
    n_total = n_move + int(round(settle / dt))
    horizon = controller.horizon
    x_max = controller.gains.x_max
    u_max = controller.gains.u_max

    state = plant.initial_state(trajectory.left.positions[0], trajectory.right.positions[0])
    t_log = np.zeros(n_total)
    records = {name: np.zeros((n_total, 6)) for name in ("p", "dp", "ref", "u", "w", "v", "s", "f")}
    object_log = np.zeros((n_total, 3))
    fallback = np.zeros(n_total, dtype=bool)
    saturated = np.zeros(n_total, dtype=bool)
    input_margin = np.full(n_total, np.inf)
    state_margin = np.full(n_total, np.inf)
    diverged = False
    steps = 0
    started = time.perf_counter()

    for k in range(n_total):
        t = k * dt
        arm_disturbance, object_disturbance = disturbances.forces_at(t)
        offset = offsets[min(k, n_move - 1)]
        x = plant.arm_state(state)
        f_ext = plant.measured_forces(state, arm_disturbance, offset)
        window = reference_window(references, k, horizon)
        result = controller.step(MpcStep(x, window, f_ext, f_ref))

        t_log[k] = t
        records["p"][k] = np.concatenate([x[0:3], x[6:9]])
        records["dp"][k] = np.concatenate([x[3:6], x[9:12]])
        records["ref"][k] = np.concatenate([window[0][0:3], window[0][6:9]])
        records["u"][k], records["w"][k] = result.u, result.w
        records["v"][k], records["s"][k] = result.v, result.s
        records["f"][k] = f_ext
        object_log[k] = state[12:15]
        fallback[k], saturated[k] = result.fallback, result.saturated
        if u_max is not None:
            input_margin[k] = float(np.min(u_max - np.abs(result.u)))
        if x_max is not None:
            state_margin[k] = float(np.min(x_max - np.abs(x)))
        steps = k + 1

        state = plant.step(state, result.u, arm_disturbance, object_disturbance, offset)
        if not np.all(np.isfinite(state)) or np.max(np.abs(state)) > DIVERGENCE_LIMIT:
            diverged = True
            logger.warning(f"Simulation diverged at t={t:.3f} s")
            break

    elapsed = time.perf_counter() - started
    frame = {"t": t_log[:steps], "phase": np.where(np.arange(steps) < n_move, "move", "settle")}
    for name, values in records.items():
        for arm_index, arm in enumerate(("left", "right")):
            for axis_index, column in enumerate(_columns(f"{arm}_{name}_")):
                frame[column] = values[:steps, 3 * arm_index + axis_index]
    for axis_index, column in enumerate(_columns("object_")):
        frame[column] = object_log[:steps, axis_index]
    frame["fallback"] = fallback[:steps]
    frame["saturated"] = saturated[:steps]
    frame["input_margin"] = input_margin[:steps]
    frame["state_margin"] = state_margin[:steps]
    log = pd.DataFrame(frame)

    summary = summarize(log, references[-1], state, diverged)
    logger.info(
        f"Simulated {steps} steps in {elapsed:.2f} s: terminal error {summary['terminal_error']:.2e} m, "
        f"{summary['fallback_steps']} fallback, {summary['saturated_steps']} saturated"
    )
    return SimulationResult(log, summary, diverged)


def summarize(log: pd.DataFrame, final_reference: np.ndarray, final_state: np.ndarray, diverged: bool) -> Dict[str, float]:
    """Tracking statistics of a simulation log"""
    p = log[_columns("left_p_") + _columns("right_p_")].to_numpy()
    ref = log[_columns("left_ref_") + _columns("right_ref_")].to_numpy()
    error = np.hstack(
        [np.linalg.norm(p[:, 0:3] - ref[:, 0:3], axis=1)[:, None], np.linalg.norm(p[:, 3:6] - ref[:, 3:6], axis=1)[:, None]]
    )
    relative = (p[:, 0:3] - p[:, 3:6]) - (ref[:, 0:3] - ref[:, 3:6])
    relative_norm = np.linalg.norm(relative, axis=1)

    terminal = max(
        float(np.linalg.norm(final_state[0:3] - final_reference[0:3])),
        float(np.linalg.norm(final_state[6:9] - final_reference[6:9])),
    )
    normal = ~log["fallback"].to_numpy()
    violation = -log["state_margin"].to_numpy()[normal]
    return {
        "steps": int(len(log)),
        "terminal_error": float("nan") if diverged else terminal,
        "max_tracking_error": float(error.max()) if len(error) else 0.0,
        "rms_tracking_error": float(np.sqrt(np.mean(error ** 2))) if len(error) else 0.0,
        "max_relative_error": float(relative_norm.max()) if len(relative_norm) else 0.0,
        "rms_relative_error": float(np.sqrt(np.mean(relative_norm ** 2))) if len(relative_norm) else 0.0,
        "fallback_steps": int(log["fallback"].sum()),
        "saturated_steps": int(log["saturated"].sum()),
        "max_state_violation": float(max(violation.max(initial=0.0), 0.0)),
        "peak_force": float(np.abs(log[_columns("left_u_") + _columns("right_u_")].to_numpy()).max(initial=0.0)),
        "diverged": bool(diverged),
    }
